#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "trajcm/trajcm.hpp"

namespace trajcm::cli {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json file_entry(const fs::path& path, const std::string& name) {
  return {{"path", name}, {"bytes", fs::file_size(path)}, {"fnv1a64", fnv1a64_file(path)}};
}

EventSlice read_events(const json& cfg) {
  const fs::path path = cfg.at("events").get<std::string>();
  std::optional<SensorGeometry> geometry;
  const int w = cfg.value("width", 0);
  const int h = cfg.value("height", 0);
  if (w > 0 && h > 0) geometry = SensorGeometry{w, h};
  return load_events(path, event_format_for(path), geometry);
}

Basis basis_from(const json& cfg) {
  const auto name = cfg.at("basis").get<std::string>();
  Basis b;
  if (name == "poly") {
    b.kind = BasisKind::Polynomial;
  } else if (name == "bezier") {
    b.kind = BasisKind::Bezier;
  } else {
    throw std::invalid_argument("basis must be 'poly' or 'bezier', got '" + name + "'");
  }
  b.degree = cfg.at("degree").get<int>();
  if (b.degree < 1) throw std::invalid_argument("degree must be >= 1");
  return b;
}

void check_unit_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " must be in [0, 1], got " + std::to_string(t));
  }
}

KnnConfig knn_from(const json& cfg) {
  return {cfg.at("k").get<int>(), cfg.value("tile", 64)};
}

// Output files are named relative to the run directory.
struct Outputs {
  fs::path dir;
  json entries = json::array();
  fs::path add(const std::string& name) { return dir / name; }
  void record(const std::string& name) { entries.push_back(file_entry(dir / name, name)); }
};

json run_synth(const json& cfg, Outputs& out, json& results) {
  const fs::path spec_path = cfg.at("spec").get<std::string>();
  std::ifstream in(spec_path);
  if (!in) throw ParseError("cannot open scene spec '" + spec_path.string() + "'");
  const SceneSpec spec = parse_scene_spec(in, spec_path.string());
  const auto start = Clock::now();
  const SyntheticScene scene = generate_events(spec, cfg.at("seed").get<std::uint64_t>());
  const double t_generate = seconds_since(start);

  const std::string format = cfg.at("format").get<std::string>();
  if (format != "evt" && format != "csv") throw std::invalid_argument("format must be 'evt' or 'csv'");
  const std::string events_name = format == "csv" ? "events.csv" : "events.evt";
  save_events(scene.events, out.add(events_name), format == "csv" ? EventFormat::Csv : EventFormat::Binary);
  out.record(events_name);
  for (std::size_t k = 0; k < scene.gt.maps.size(); ++k) {
    const std::string name = "gt_" + std::to_string(k + 1) + ".flo";
    save_flow_map(scene.gt.maps[k], out.add(name));
    out.record(name);
  }
  results["events"] = scene.events.size();
  results["seeds"] = scene.seeds.size();
  results["width"] = spec.width;
  results["height"] = spec.height;
  return {{"generate_seconds", t_generate}};
}

json run_estimate(const json& cfg, Outputs& out, json& results) {
  const EventSlice slice = read_events(cfg);
  const TrajectoryField init(slice.width(), slice.height(), basis_from(cfg), cfg.at("stride").get<int>());

  OptimConfig oc;
  oc.iterations = cfg.at("iters").get<int>();
  oc.learning_rate = cfg.at("lr").get<double>();
  oc.seed = cfg.at("seed").get<std::uint64_t>();
  oc.early_stop = cfg.at("early_stop").get<bool>();
  ObjectiveConfig& obj = oc.objective;
  obj.knn = knn_from(cfg);
  obj.n_bins = cfg.at("nbins").get<int>();
  obj.lambda = cfg.at("lambda").get<double>();
  obj.sigma = cfg.at("sigma").get<double>();
  obj.time_weighting = cfg.at("time_weighting").get<bool>();
  const auto lookup = cfg.at("lookup").get<std::string>();
  if (lookup != "nearest" && lookup != "trilinear") throw std::invalid_argument("lookup must be 'nearest' or 'trilinear'");
  obj.lookup = lookup == "trilinear" ? VolumeLookup::Trilinear : VolumeLookup::Nearest;
  const auto norm = cfg.at("normalization").get<std::string>();
  if (norm != "pixel" && norm != "none") throw std::invalid_argument("normalization must be 'pixel' or 'none'");
  obj.normalization = norm == "none" ? ContrastNormalization::None : ContrastNormalization::PerPixel;

  const auto reference = cfg.at("reference").get<std::string>();
  if (reference == "random") {
    oc.reference = ReferenceMode::Random;
  } else if (reference == "fixed") {
    oc.reference = ReferenceMode::Fixed;
    oc.fixed_t_ref = cfg.at("t_ref").get<double>();
    check_unit_time(oc.fixed_t_ref, "t_ref");
  } else if (reference == "three-point") {
    oc.reference = ReferenceMode::ThreePoint;
  } else {
    throw std::invalid_argument("reference must be random, fixed or three-point");
  }
  const auto times = cfg.at("times").get<std::vector<double>>();
  for (double t : times) check_unit_time(t, "flow map time");

  const OptimTrace trace = minimize(slice, init, oc);

  save_trajectory_field(trace.final_field, out.add("field.trj"));
  out.record("field.trj");
  write_trace_csv(trace, out.add("trace.csv"));
  out.record("trace.csv");
  for (std::size_t i = 0; i < times.size(); ++i) {
    const std::string name = "flow_" + std::to_string(i + 1) + ".flo";
    save_flow_map(predict_flow_map(trace.final_field, times[i], obj.knn.k), out.add(name));
    out.record(name);
  }
  results["iterations"] = trace.entries.size();
  results["early_stopped"] = trace.early_stopped;
  if (!trace.entries.empty()) results["final_total"] = trace.entries.back().total;
  return {{"optimize_seconds", trace.wall_seconds}};
}

std::vector<FlowMap> read_maps(const json& list) {
  std::vector<FlowMap> maps;
  for (const auto& p : list) maps.push_back(load_flow_map(p.get<std::string>()));
  return maps;
}

json run_eval(const json& cfg, Outputs& out, json& results) {
  const auto pred = read_maps(cfg.at("pred"));
  const auto gt = read_maps(cfg.at("gt"));
  MotionEval ev;
  ev.trajectory = tepe_tae(pred, gt, cfg.at("threshold").get<double>());

  const auto events = cfg.at("events").get<std::string>();
  const auto field_path = cfg.at("field").get<std::string>();
  if (!events.empty() && !field_path.empty()) {
    const EventSlice slice = read_events(cfg);
    const TrajectoryField field = load_trajectory_field(field_path);
    const double t_ref = cfg.at("fwl_t_ref").get<double>();
    check_unit_time(t_ref, "fwl_t_ref");
    ev.fwl = fwl(slice, build_displacement_volume(field, t_ref, knn_from(cfg), cfg.at("nbins").get<int>()));
    ev.has_fwl = true;
  } else if (!events.empty() || !field_path.empty()) {
    throw std::invalid_argument("FWL needs both --events and --field");
  }

  {
    std::ofstream csv(out.add("eval.csv"));
    write_eval_csv(ev, csv);
    std::ofstream txt(out.add("eval.txt"));
    write_eval_text(ev, txt);
  }
  out.record("eval.csv");
  out.record("eval.txt");
  results["tepe"] = ev.trajectory.tepe;
  results["tae"] = ev.trajectory.tae;
  results["pct_out"] = ev.trajectory.pct_out;
  if (ev.has_fwl) results["fwl"] = ev.fwl;
  return json::object();
}

json run_render(const json& cfg, Outputs& out, json& results) {
  const EventSlice slice = read_events(cfg);
  const double t_ref = cfg.at("t_ref").get<double>();
  check_unit_time(t_ref, "t_ref");
  const int n_bins = cfg.at("nbins").get<int>();
  const auto field_path = cfg.at("field").get<std::string>();

  DisplacementVolume volume;
  if (field_path.empty()) {
    volume = DisplacementVolume::zero(slice.width(), slice.height(), n_bins, 4, t_ref);
  } else {
    const TrajectoryField field = load_trajectory_field(field_path);
    volume = build_displacement_volume(field, t_ref, knn_from(cfg), n_bins);
    results["fwl"] = fwl(slice, volume);
  }
  const Iwe iwe = build_iwe(warp_events(slice, volume, false), cfg.at("sigma").get<double>(), true);

  PgmOptions opt;
  opt.bits = cfg.at("bits").get<int>();
  const auto channel = cfg.at("channel").get<std::string>();
  if (channel == "sum") opt.channel = IweChannel::Sum;
  else if (channel == "pos") opt.channel = IweChannel::Positive;
  else if (channel == "neg") opt.channel = IweChannel::Negative;
  else throw std::invalid_argument("channel must be sum, pos or neg");
  write_pgm(iwe, out.add("iwe.pgm"), opt);
  out.record("iwe.pgm");
  return json::object();
}

json input_entries(const json& cfg) {
  json inputs = json::array();
  auto add = [&](const std::string& role, const std::string& path) {
    if (path.empty()) return;
    json e = file_entry(path, path);
    e["role"] = role;
    inputs.push_back(e);
  };
  for (const char* key : {"spec", "events", "field"}) {
    if (cfg.contains(key)) add(key, cfg[key].get<std::string>());
  }
  for (const char* key : {"pred", "gt"}) {
    if (!cfg.contains(key)) continue;
    for (const auto& p : cfg[key]) add(key, p.get<std::string>());
  }
  return inputs;
}

}  // namespace

std::string fnv1a64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return hex64(h);
}

json execute(const std::string& command, const json& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["trajcm_version"] = kVersion;
  manifest["command"] = command;
  manifest["config"] = config;
  manifest["inputs"] = input_entries(config);
  manifest["threads"] = thread_count();

  Outputs out{out_dir};
  json results = json::object();
  const auto start = Clock::now();
  json timings;
  if (command == "synth") {
    timings = run_synth(config, out, results);
  } else if (command == "estimate") {
    timings = run_estimate(config, out, results);
  } else if (command == "eval") {
    timings = run_eval(config, out, results);
  } else if (command == "render") {
    timings = run_render(config, out, results);
  } else {
    throw std::invalid_argument("unknown command '" + command + "' in manifest");
  }
  timings["total_seconds"] = seconds_since(start);
  manifest["outputs"] = out.entries;
  manifest["results"] = results;
  manifest["timings"] = timings;

  std::ofstream f(out_dir / "manifest.json");
  f << manifest.dump(2) << '\n';
  if (!f) throw std::runtime_error("cannot write manifest in '" + out_dir.string() + "'");
  return manifest;
}

json replay(const fs::path& manifest_path, const fs::path& out_dir) {
  std::ifstream in(manifest_path);
  if (!in) throw ParseError("cannot open manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  for (const auto& input : manifest.at("inputs")) {
    const std::string path = input.at("path").get<std::string>();
    if (!fs::exists(path) || fnv1a64_file(path) != input.at("fnv1a64").get<std::string>()) {
      throw std::invalid_argument("input '" + path + "' is missing or changed since the manifest was written");
    }
  }
  return execute(manifest.at("command").get<std::string>(), manifest.at("config"), out_dir);
}

bool same_outputs(const json& expected, const json& actual, std::string& report) {
  std::ostringstream msg;
  bool same = expected.at("outputs").size() == actual.at("outputs").size();
  if (!same) msg << "output count differs\n";
  for (const auto& e : expected.at("outputs")) {
    bool found = false;
    for (const auto& a : actual.at("outputs")) {
      if (a.at("path") != e.at("path")) continue;
      found = true;
      if (a.at("fnv1a64") != e.at("fnv1a64") || a.at("bytes") != e.at("bytes")) {
        same = false;
        msg << e.at("path").get<std::string>() << " differs\n";
      }
    }
    if (!found) {
      same = false;
      msg << e.at("path").get<std::string>() << " missing\n";
    }
  }
  report = msg.str();
  return same;
}

}  // namespace trajcm::cli
