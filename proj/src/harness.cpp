#include "act/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

namespace act {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Typed reader over one config object that rejects unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
      out = v->get<std::int64_t>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number or null");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + "expected an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) throw ConfigError(where(key) + "expected an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return path_ + key + "."; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path_ + k + "'");
  }

 private:
  std::string where(const char* key = "") const { return "config key '" + path_ + key + "': "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json style_json(const DomainStyle& s) {
  return {{"class_intensities", s.class_intensities},
          {"noise_sigma", s.noise_sigma},
          {"gamma", s.gamma},
          {"bias_amplitude", s.bias_amplitude}};
}

void read_style(const json& j, const std::string& path, DomainStyle& s) {
  ObjectReader r(j, path);
  r.get("class_intensities", s.class_intensities);
  r.get("noise_sigma", s.noise_sigma);
  r.get("gamma", s.gamma);
  r.get("bias_amplitude", s.bias_amplitude);
  r.finish();
}

json data_json(const RunConfig& c) {
  const DatagenConfig& d = c.data;
  json shape = {{"min_radius", d.shape.min_radius},
                {"max_radius", d.shape.max_radius},
                {"min_inner_scale", d.shape.min_inner_scale},
                {"max_inner_scale", d.shape.max_inner_scale},
                {"min_levels", d.shape.min_levels},
                {"max_levels", d.shape.max_levels},
                {"require_all_classes", d.shape.require_all_classes},
                {"max_attempts", d.shape.max_attempts}};
  return {{"manifest", c.manifest ? json(c.manifest->generic_string()) : json(nullptr)},
          {"height", d.height},
          {"width", d.width},
          {"num_classes", d.num_classes},
          {"n_source", d.n_source},
          {"n_target_labeled", d.n_target_labeled},
          {"n_target_unlabeled", d.n_target_unlabeled},
          {"n_test", d.n_test},
          {"n_source_test", d.n_source_test},
          {"seed", d.seed},
          {"shape", shape},
          {"source_style", style_json(d.source_style)},
          {"target_style", style_json(d.target_style)}};
}

json act_json(const ActConfig& a) {
  return {{"epsilon", a.epsilon},
          {"lambda0", a.lambda0},
          {"decay_k", a.decay_k},
          {"batch_size", a.batch_size},
          {"eta", a.eta},
          {"total_iterations", a.total_iterations},
          {"pair_fraction", a.pair_fraction},
          {"features", a.features},
          {"eval_every", a.eval_every},
          {"fixed_lambda", a.fixed_lambda ? json(*a.fixed_lambda) : json(nullptr)}};
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.data = default_datagen_config();
  c.act.batch_size = 2;
  c.act.eta = 0.1;
  return c;
}

json to_json(const RunConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"runs", c.runs},
          {"master_seed", c.master_seed},
          {"output_dir", c.output_dir.generic_string()},
          {"jobs", c.jobs},
          {"data", data_json(c)},
          {"act", act_json(c.act)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = default_run_config();
  ObjectReader r(j, "");
  std::string mode(to_string(c.mode));
  r.get("mode", mode);
  try {
    c.mode = parse_mode(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  r.get("runs", c.runs);
  r.get("master_seed", c.master_seed);
  std::string out = c.output_dir.string();
  r.get("output_dir", out);
  c.output_dir = out;
  r.get("jobs", c.jobs);

  if (const json* d = r.find("data")) {
    ObjectReader dr(*d, "data.");
    if (const json* m = dr.find("manifest")) {
      if (m->is_null())
        c.manifest.reset();
      else if (m->is_string())
        c.manifest = fs::path(m->get<std::string>());
      else
        throw ConfigError("config key 'data.manifest': expected a path or null");
    }
    std::int64_t h = c.data.height, w = c.data.width;
    dr.get("height", h);
    dr.get("width", w);
    c.data.height = h;
    c.data.width = w;
    dr.get("num_classes", c.data.num_classes);
    dr.get("n_source", c.data.n_source);
    dr.get("n_target_labeled", c.data.n_target_labeled);
    dr.get("n_target_unlabeled", c.data.n_target_unlabeled);
    dr.get("n_test", c.data.n_test);
    dr.get("n_source_test", c.data.n_source_test);
    dr.get("seed", c.data.seed);
    if (const json* s = dr.find("shape")) {
      ObjectReader sr(*s, "data.shape.");
      ShapeParams& p = c.data.shape;
      sr.get("min_radius", p.min_radius);
      sr.get("max_radius", p.max_radius);
      sr.get("min_inner_scale", p.min_inner_scale);
      sr.get("max_inner_scale", p.max_inner_scale);
      sr.get("min_levels", p.min_levels);
      sr.get("max_levels", p.max_levels);
      sr.get("require_all_classes", p.require_all_classes);
      sr.get("max_attempts", p.max_attempts);
      sr.finish();
    }
    if (const json* s = dr.find("source_style")) read_style(*s, "data.source_style.", c.data.source_style);
    if (const json* s = dr.find("target_style")) read_style(*s, "data.target_style.", c.data.target_style);
    dr.finish();
  }

  if (const json* a = r.find("act")) {
    ObjectReader ar(*a, "act.");
    ar.get("epsilon", c.act.epsilon);
    ar.get("lambda0", c.act.lambda0);
    ar.get("decay_k", c.act.decay_k);
    ar.get("batch_size", c.act.batch_size);
    ar.get("eta", c.act.eta);
    ar.get("total_iterations", c.act.total_iterations);
    ar.get("pair_fraction", c.act.pair_fraction);
    ar.get("features", c.act.features);
    ar.get("eval_every", c.act.eval_every);
    ar.get("fixed_lambda", c.act.fixed_lambda);
    ar.finish();
  }
  r.finish();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' does not name an object field");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = run_config_from_json(j);
  validate(c);
  return c;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  RunConfig c = parse_run_config(text, overrides);
  if (c.manifest && c.manifest->is_relative()) c.manifest = path.parent_path() / *c.manifest;
  return c;
}

void validate(const RunConfig& c) {
  if (c.runs < 1) throw ConfigError("runs must be >= 1");
  if (c.jobs < 0) throw ConfigError("jobs must be >= 0");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  try {
    validate(c.act);
    if (!c.manifest) validate(c.data);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string config_echo(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j.erase("jobs");
  return j.dump();
}

std::uint64_t run_seed(const RunConfig& c, int run_index) {
  return c.master_seed + static_cast<std::uint64_t>(run_index);
}

DatasetSplits load_data(const RunConfig& c) {
  try {
    if (c.manifest) return load_dataset(*c.manifest, c.data.num_classes);
    return make_splits(c.data);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// --- reports --------------------------------------------------------------------

namespace {

json consensus_json(const std::optional<Consensus>& c) {
  if (!c) return nullptr;
  return json::array({c->both, c->only_one, c->none});
}

std::optional<Consensus> consensus_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("consensus must be [both, only_one, none]");
  return Consensus{j[0].get<Real>(), j[1].get<Real>(), j[2].get<Real>()};
}

}  // namespace

std::string serialize_report(const RunReport& r) {
  std::string out;
  json header = {{"type", "header"},
                 {"schema_version", kReportSchemaVersion},
                 {"mode", r.mode},
                 {"seed", r.seed},
                 {"iterations", r.per_iteration.size()},
                 {"checkpoints", r.checkpoints.size()},
                 {"config", r.config}};
  out += header.dump() + "\n";
  for (const auto& it : r.per_iteration) {
    json line = {{"type", "iteration"},   {"I", it.iteration},          {"lambda", it.lambda},
                 {"u_phi", it.u_phi},     {"u_theta", it.u_theta},      {"loss_phi", it.loss_phi},
                 {"loss_theta", it.loss_theta}, {"consensus", consensus_json(it.consensus)}};
    out += line.dump() + "\n";
  }
  for (const auto& c : r.checkpoints) {
    json line = {{"type", "checkpoint"}, {"I", c.iteration}, {"dsc", c.dsc}, {"hd", c.hd},
                 {"consensus", consensus_json(c.consensus)}};
    out += line.dump() + "\n";
  }
  json metrics = json::array();
  for (const auto& m : r.final_metrics)
    metrics.push_back({{"class", class_label(m.class_id)}, {"dsc", m.dsc}, {"hd", m.hd}});
  out += json{{"type", "final"}, {"metrics", metrics}}.dump() + "\n";
  return out;
}

RunReport parse_report(const std::string& text, const std::string& name) {
  RunReport r;
  std::size_t iterations = 0, checkpoints = 0;
  bool have_header = false, have_final = false;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos)
      throw ReportError(name + ": truncated at byte " + std::to_string(text.size()) +
                        " (last record has no newline)");
    ++line_no;
    const std::string_view line(text.data() + pos, end - pos);
    const std::string at = name + ": line " + std::to_string(line_no) + " (byte " + std::to_string(pos) + ")";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ReportError(name + ": parse error at byte " + std::to_string(pos + e.byte - (e.byte > 0)) +
                        ": " + e.what());
    }
    if (have_final) throw ReportError(at + ": record after the final record");
    try {
      const std::string type = j.at("type").get<std::string>();
      if (!have_header) {
        if (type != "header") throw ReportError(at + ": expected a header record");
        const int version = j.at("schema_version").get<int>();
        if (version != kReportSchemaVersion)
          throw ReportError(name + ": report schema version " + std::to_string(version) +
                            " is not supported (expected " + std::to_string(kReportSchemaVersion) + ")");
        r.mode = j.at("mode").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config = j.at("config").get<std::string>();
        iterations = j.at("iterations").get<std::size_t>();
        checkpoints = j.at("checkpoints").get<std::size_t>();
        have_header = true;
      } else if (type == "iteration") {
        IterationRecord it;
        it.iteration = j.at("I").get<int>();
        it.lambda = j.at("lambda").get<Real>();
        it.u_phi = j.at("u_phi").get<int>();
        it.u_theta = j.at("u_theta").get<int>();
        it.loss_phi = j.at("loss_phi").get<Real>();
        it.loss_theta = j.at("loss_theta").get<Real>();
        it.consensus = consensus_from(j.at("consensus"));
        r.per_iteration.push_back(it);
      } else if (type == "checkpoint") {
        Checkpoint c;
        c.iteration = j.at("I").get<int>();
        c.dsc = j.at("dsc").get<Real>();
        c.hd = j.at("hd").get<Real>();
        c.consensus = consensus_from(j.at("consensus"));
        r.checkpoints.push_back(c);
      } else if (type == "final") {
        for (const auto& m : j.at("metrics")) {
          const std::string cls = m.at("class").get<std::string>();
          const int id = cls == "whole" ? kWholeForeground : std::stoi(cls);
          r.final_metrics.push_back({id, m.at("dsc").get<Real>(), m.at("hd").get<Real>()});
        }
        have_final = true;
      } else {
        throw ReportError(at + ": unknown record type '" + type + "'");
      }
    } catch (const ReportError&) {
      throw;
    } catch (const std::exception& e) {
      throw ReportError(at + ": " + e.what());
    }
    pos = end + 1;
  }
  if (!have_header) throw ReportError(name + ": empty report");
  if (!have_final) throw ReportError(name + ": truncated report (no final record)");
  if (r.per_iteration.size() != iterations || r.checkpoints.size() != checkpoints)
    throw ReportError(name + ": record counts do not match the header");
  return r;
}

void save_report(const fs::path& path, const RunReport& report) { write_text(path, serialize_report(report)); }

RunReport load_report(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ReportError(e.what());
  }
  return parse_report(text, path.string());
}

std::string report_file_name(std::uint64_t seed) { return "report_" + std::to_string(seed) + ".jsonl"; }

std::string summary_csv(const Summary& s) {
  std::string out = "mode,metric,class,mean,std\n";
  for (const auto& row : s.rows)
    out += s.mode + "," + row.metric + "," + row.class_label + "," + fmt("%.10g", row.mean) + "," +
           fmt("%.10g", row.std) + "\n";
  return out;
}

std::string format_mean_std(const SummaryRow& row) {
  const double scale = row.metric == "dsc" ? 100.0 : 1.0;
  return fmt("%.1f", row.mean * scale) + "±" + fmt("%.1f", row.std * scale);
}

// --- experiments ----------------------------------------------------------------

ExperimentResult run_experiment(const RunConfig& config) {
  validate(config);
  const DatasetSplits splits = load_data(config);
  {
    TrainingData probe(splits);
    try {
      check_requirements(config.mode, probe);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  try {
    write_text(config.output_dir / "config.json", to_json(config).dump(2) + "\n");
  } catch (const std::runtime_error&) {
    throw ConfigError("output_dir " + config.output_dir.string() + " is not writable");
  }

  const std::string echo = config_echo(config);
  auto one_run = [&](int index) {
    const std::uint64_t seed = run_seed(config, index);
    TrainingData data(splits);
    RunOutcome outcome = run_mode(config.mode, data, splits.target_test, config.act, seed);
    outcome.report.config = echo;
    const std::string stem = "params_" + std::to_string(seed);
    save_report(config.output_dir / report_file_name(seed), outcome.report);
    if (outcome.phi) {
      save_snapshot(config.output_dir / (stem + "_theta.bin"), outcome.test_model);
      save_snapshot(config.output_dir / (stem + "_phi.bin"), *outcome.phi);
    } else {
      save_snapshot(config.output_dir / (stem + "_model.bin"), outcome.test_model);
    }
    return std::move(outcome.report);
  };

  ExperimentResult result;
  result.reports.resize(static_cast<std::size_t>(config.runs));
  const int jobs = config.jobs == 0 ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))
                                    : config.jobs;
  if (jobs <= 1) {
    for (int i = 0; i < config.runs; ++i) result.reports[static_cast<std::size_t>(i)] = one_run(i);
  } else {
    for (int first = 0; first < config.runs; first += jobs) {
      std::vector<std::future<RunReport>> pending;
      for (int i = first; i < std::min(config.runs, first + jobs); ++i)
        pending.push_back(std::async(std::launch::async, one_run, i));
      for (std::size_t k = 0; k < pending.size(); ++k)
        result.reports[static_cast<std::size_t>(first) + k] = pending[k].get();
    }
  }

  result.summary = aggregate(result.reports);
  write_text(config.output_dir / "summary.csv", summary_csv(result.summary));
  return result;
}

std::string_view to_string(SweepAxis axis) {
  return axis == SweepAxis::n_lt ? "n_lt" : "pair_fraction";
}

SweepAxis parse_axis(std::string_view name) {
  if (name == "n_lt") return SweepAxis::n_lt;
  if (name == "pair_fraction") return SweepAxis::pair_fraction;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected n_lt or pair_fraction)");
}

RunConfig sweep_point(const RunConfig& base, SweepAxis axis, const std::string& value) {
  RunConfig c = base;
  const std::string bad = "invalid " + std::string(to_string(axis)) + " value '" + value + "'";
  std::size_t used = 0;
  try {
    if (axis == SweepAxis::n_lt) {
      if (base.manifest) throw ConfigError(bad + ": n_lt sweeps need generated data");
      const int n = std::stoi(value, &used);
      if (used != value.size() || n < 1) throw ConfigError(bad + ": expected an integer >= 1");
      c.data.n_target_labeled = n;
    } else {
      const double f = std::stod(value, &used);
      if (used != value.size() || !(f > 0.0 && f <= 1.0)) throw ConfigError(bad + ": expected a number in (0, 1]");
      c.act.pair_fraction = f;
    }
  } catch (const std::logic_error&) {
    throw ConfigError(bad);
  }
  c.output_dir = base.output_dir / (std::string(to_string(axis)) + "_" + value);
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw ConfigError(bad + ": " + e.what());
  }
  return c;
}

std::vector<SweepRow> sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<RunConfig> points;
  for (const auto& v : values) points.push_back(sweep_point(base, axis, v));

  std::vector<SweepRow> rows;
  std::string csv = "axis,value,mode,dsc_mean,dsc_std,hd_mean,hd_std\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto result = run_experiment(points[i]);
    const auto& d = result.summary.find("dsc", "whole");
    const auto& h = result.summary.find("hd", "whole");
    csv += std::string(to_string(axis)) + "," + values[i] + "," + result.summary.mode + "," +
           fmt("%.10g", d.mean) + "," + fmt("%.10g", d.std) + "," + fmt("%.10g", h.mean) + "," +
           fmt("%.10g", h.std) + "\n";
    rows.push_back({values[i], std::move(result.summary)});
  }
  fs::create_directories(base.output_dir);
  write_text(base.output_dir / ("sweep_" + std::string(to_string(axis)) + ".csv"), csv);
  return rows;
}

}  // namespace act
