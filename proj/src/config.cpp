#include "ace/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ace/errors.hpp"

namespace ace {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_unsigned(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

// shortest text that reads back to the same double
std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

// One entry per key: how to set it and how to print it.
struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Table = std::map<std::string, std::vector<std::pair<std::string, Field>>>;

template <class T>
Field unsigned_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = static_cast<T>(to_unsigned(v)); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

const Table& fields() {
  static const Table table = [] {
    Table t;
    auto& run = t["run"];
    run.emplace_back("task", Field{[](RunConfig& c, const std::string& v) { c.task = parse_task(v); },
                                   [](const RunConfig& c) { return task_name(c.task); }});
    run.emplace_back("output_dir", Field{[](RunConfig& c, const std::string& v) { c.output_dir = v; },
                                         [](const RunConfig& c) { return c.output_dir.string(); }});

    auto& model = t["model"];
    model.emplace_back("kind", Field{[](RunConfig& c, const std::string& v) { c.model = parse_model_kind(v); },
                                     [](const RunConfig& c) { return model_kind_name(c.model); }});
    model.emplace_back("hidden", unsigned_field(&RunConfig::hidden));
    model.emplace_back("augment", unsigned_field(&RunConfig::augment));
    model.emplace_back("channels", unsigned_field(&RunConfig::channels));

    auto& solver = t["solver"];
    solver.emplace_back("method", Field{[](RunConfig& c, const std::string& v) { c.training.solver.method = parse_method(v); },
                                        [](const RunConfig& c) { return method_name(c.training.solver.method); }});
    solver.emplace_back("step_size", Field{[](RunConfig& c, const std::string& v) { c.training.solver.step_size = to_double(v); },
                                           [](const RunConfig& c) { return fmt(c.training.solver.step_size); }});
    solver.emplace_back("rtol", Field{[](RunConfig& c, const std::string& v) { c.training.solver.rtol = to_double(v); },
                                      [](const RunConfig& c) { return fmt(c.training.solver.rtol); }});
    solver.emplace_back("atol", Field{[](RunConfig& c, const std::string& v) { c.training.solver.atol = to_double(v); },
                                      [](const RunConfig& c) { return fmt(c.training.solver.atol); }});
    solver.emplace_back("max_steps",
                        Field{[](RunConfig& c, const std::string& v) { c.training.solver.max_steps = static_cast<long>(to_unsigned(v)); },
                              [](const RunConfig& c) { return std::to_string(c.training.solver.max_steps); }});
    solver.emplace_back("min_step", Field{[](RunConfig& c, const std::string& v) { c.training.solver.min_step = to_double(v); },
                                          [](const RunConfig& c) { return fmt(c.training.solver.min_step); }});
    // "auto" keeps the interval / 100 default
    solver.emplace_back("initial_step",
                        Field{[](RunConfig& c, const std::string& v) {
                                if (v == "auto") {
                                  c.training.solver.initial_step.reset();
                                } else {
                                  c.training.solver.initial_step = to_double(v);
                                }
                              },
                              [](const RunConfig& c) {
                                return c.training.solver.initial_step ? fmt(*c.training.solver.initial_step) : std::string("auto");
                              }});

    auto& tr = t["training"];
    tr.emplace_back("epochs", Field{[](RunConfig& c, const std::string& v) { c.training.epochs = static_cast<int>(to_unsigned(v)); },
                                    [](const RunConfig& c) { return std::to_string(c.training.epochs); }});
    tr.emplace_back("batch_size", Field{[](RunConfig& c, const std::string& v) { c.training.batch_size = to_unsigned(v); },
                                        [](const RunConfig& c) { return std::to_string(c.training.batch_size); }});
    tr.emplace_back("lr", Field{[](RunConfig& c, const std::string& v) { c.training.lr = to_double(v); },
                                [](const RunConfig& c) { return fmt(c.training.lr); }});
    tr.emplace_back("lambda", Field{[](RunConfig& c, const std::string& v) { c.training.loss.lambda = to_double(v); },
                                    [](const RunConfig& c) { return fmt(c.training.loss.lambda); }});
    tr.emplace_back("reg_norm", Field{[](RunConfig& c, const std::string& v) { c.training.loss.norm = parse_reg_norm(v); },
                                      [](const RunConfig& c) { return reg_norm_name(c.training.loss.norm); }});
    tr.emplace_back("seed", Field{[](RunConfig& c, const std::string& v) { c.training.seed = to_unsigned(v); },
                                  [](const RunConfig& c) { return std::to_string(c.training.seed); }});
    tr.emplace_back("track_test", Field{[](RunConfig& c, const std::string& v) { c.training.track_test = to_bool(v); },
                                        [](const RunConfig& c) { return fmt(c.training.track_test); }});

    auto& data = t["data"];
    data.emplace_back("samples", Field{[](RunConfig& c, const std::string& v) { c.data.samples = to_unsigned(v); },
                                       [](const RunConfig& c) { return std::to_string(c.data.samples); }});
    data.emplace_back("noise", Field{[](RunConfig& c, const std::string& v) { c.data.noise = to_double(v); },
                                     [](const RunConfig& c) { return fmt(c.data.noise); }});
    data.emplace_back("val_fraction", Field{[](RunConfig& c, const std::string& v) { c.data.val_fraction = to_double(v); },
                                            [](const RunConfig& c) { return fmt(c.data.val_fraction); }});
    data.emplace_back("test_fraction", Field{[](RunConfig& c, const std::string& v) { c.data.test_fraction = to_double(v); },
                                             [](const RunConfig& c) { return fmt(c.data.test_fraction); }});
    data.emplace_back("dims", Field{[](RunConfig& c, const std::string& v) { c.data.dims = to_unsigned(v); },
                                    [](const RunConfig& c) { return std::to_string(c.data.dims); }});
    data.emplace_back("length", Field{[](RunConfig& c, const std::string& v) { c.data.length = to_unsigned(v); },
                                      [](const RunConfig& c) { return std::to_string(c.data.length); }});
    data.emplace_back("window", Field{[](RunConfig& c, const std::string& v) { c.data.window = to_unsigned(v); },
                                      [](const RunConfig& c) { return std::to_string(c.data.window); }});
    data.emplace_back("coupling", Field{[](RunConfig& c, const std::string& v) { c.data.coupling = v; },
                                        [](const RunConfig& c) { return c.data.coupling; }});
    data.emplace_back("coupling_scale", Field{[](RunConfig& c, const std::string& v) { c.data.coupling_scale = to_double(v); },
                                              [](const RunConfig& c) { return fmt(c.data.coupling_scale); }});
    data.emplace_back("series_noise", Field{[](RunConfig& c, const std::string& v) { c.data.series_noise = to_double(v); },
                                            [](const RunConfig& c) { return fmt(c.data.series_noise); }});
    data.emplace_back("mnist_dir", Field{[](RunConfig& c, const std::string& v) { c.data.mnist_dir = v; },
                                         [](const RunConfig& c) { return c.data.mnist_dir.string(); }});
    data.emplace_back("train_limit", Field{[](RunConfig& c, const std::string& v) { c.data.train_limit = to_unsigned(v); },
                                           [](const RunConfig& c) { return std::to_string(c.data.train_limit); }});
    data.emplace_back("test_limit", Field{[](RunConfig& c, const std::string& v) { c.data.test_limit = to_unsigned(v); },
                                          [](const RunConfig& c) { return std::to_string(c.data.test_limit); }});
    data.emplace_back("downsample", Field{[](RunConfig& c, const std::string& v) { c.data.downsample = to_bool(v); },
                                          [](const RunConfig& c) { return fmt(c.data.downsample); }});
    return t;
  }();
  return table;
}

constexpr const char* kSectionOrder[] = {"run", "model", "solver", "training", "data"};

}  // namespace

void RunConfig::validate() const {
  training.solver.validate();
  training.loss.validate();
  if (training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (!(training.lr > 0.0)) throw ConfigError("training.lr must be positive");
  if (hidden == 0) throw ConfigError("model.hidden must be positive");
  if (channels == 0) throw ConfigError("model.channels must be positive");
  if (data.val_fraction < 0.0 || data.test_fraction < 0.0 || data.val_fraction + data.test_fraction >= 1.0) {
    throw ConfigError("data.val_fraction + data.test_fraction must lie in [0, 1)");
  }
  if (data.noise < 0.0 || data.series_noise < 0.0) throw ConfigError("noise levels must be non-negative");
  if (data.coupling != "ring" && data.coupling != "cycle" && data.coupling != "diagonal" && data.coupling != "zero") {
    throw ConfigError("data.coupling must be ring, cycle, diagonal or zero, got '" + data.coupling + "'");
  }
  if (!(data.coupling_scale >= 0.0 && data.coupling_scale < 1.0)) {
    throw ConfigError("data.coupling_scale must lie in [0, 1) for a stationary series");
  }
  if (task == Task::var_forecast && data.dims == 0) throw ConfigError("data.dims must be positive");
  if (task == Task::crossing && (data.samples == 0 || data.samples % 2)) {
    throw ConfigError("data.samples must be a positive even number for crossing");
  }
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  const Table& table = fields();
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!table.contains(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
    const auto& entries = table.at(section);
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == key; });
    if (it == entries.end()) throw ConfigError(where + "unknown key " + section + "." + key);
    try {
      it->second.set(cfg, value);
    } catch (const Error& e) {
      throw ConfigError(where + section + "." + key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  const Table& table = fields();
  bool first = true;
  for (const char* name : kSectionOrder) {
    if (!first) os << '\n';
    first = false;
    os << '[' << name << "]\n";
    for (const auto& [key, field] : table.at(name)) os << key << " = " << field.get(cfg) << '\n';
  }
  return os.str();
}

Tensor make_coupling(const std::string& kind, std::size_t d, double scale) {
  if (d == 0) throw ConfigError("coupling needs at least one dimension");
  Tensor a({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    if (kind == "ring") {
      // non-negative rows summing to 1 before scaling, so the spectral radius is `scale`
      a.at(i, i) += scale * 5.0 / 9.0;
      a.at(i, (i + 1) % d) += scale * 2.0 / 9.0;
      a.at(i, (i + d - 1) % d) += scale * 2.0 / 9.0;
    } else if (kind == "cycle") {
      a.at(i, (i + 1) % d) = scale;
    } else if (kind == "diagonal") {
      a.at(i, i) = scale;
    } else if (kind != "zero") {
      throw ConfigError("unknown coupling '" + kind + "'");
    }
  }
  return a;
}

}  // namespace ace
