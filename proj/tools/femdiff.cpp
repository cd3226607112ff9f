// femdiff command-line driver: mesh, gen-data, train, sample, posterior, eval.

#include "femdiff/femdiff.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace femdiff;

namespace {

constexpr const char* kVersion = "femdiff 0.1.0";

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

struct Options {
  std::string data;
  std::string checkpoint;
  std::string observation;
  std::string truth;
  std::string samples;
  std::string reference;
  std::vector<std::string> ensembles;
  std::string label;
  std::optional<int> count;
  std::optional<int> chains;
  std::optional<std::string> method;
  bool noise_baseline = false;
};

RunConfig load_config(const Globals& g) {
  RunConfig c;
  if (!g.config_path.empty()) c.merge_file(g.config_path);
  c.apply_overrides(g.overrides);
  if (g.seed) c.set("run", "seed", std::to_string(*g.seed));
  if (g.out) c.set("run", "out", *g.out);
  if (g.threads) c.set("run", "threads", std::to_string(*g.threads));
  return c;
}

json config_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [section, kv] : c.table())
    for (const auto& [k, v] : kv) j[section][k] = v;
  return j;
}

/// Hash of everything that can change results; the output location is excluded.
std::string config_hash(RunConfig c) {
  c.set("run", "out", "");
  return hex64(fnv1a(c.dump()));
}

std::uint64_t root_seed(const RunConfig& c) { return c.u64("run", "seed"); }

/// Per-draw stream shared by `sample` and `posterior`, so a zero-weight posterior reproduces `sample`.
std::uint64_t chain_seed(const RunConfig& c, std::size_t i) {
  return derive_seed(derive_seed(root_seed(c), "sample"), "chain", i);
}

int positive(const RunConfig& c, const std::string& s, const std::string& k) {
  const auto v = c.integer(s, k);
  if (v < 1 || v > 1'000'000'000) throw Error(ErrorKind::ConfigError, s + "." + k + " must be a positive integer");
  return static_cast<int>(v);
}

// ---- mesh and model setup --------------------------------------------------

struct MeshSetup {
  TriMesh finest;
  MeshHierarchy hierarchy;
  const DualGraph& graph() const { return hierarchy.levels.front(); }
};

MeshSetup build_mesh(const RunConfig& c) {
  MeshSetup m;
  const int levels = positive(c, "mesh", "levels");
  const double mu = c.real("model", "mu");
  const std::string file = c.str("mesh", "file");
  if (!file.empty()) {
    if (levels != 1) throw Error(ErrorKind::ConfigError, "mesh.levels must be 1 when mesh.file is set");
    m.finest = load_mesh(file);
    m.hierarchy = build_hierarchy({dual_graph(m.finest)}, mu);
    return m;
  }
  const int nx = positive(c, "mesh", "nx"), ny = positive(c, "mesh", "ny");
  const auto keep = domain_predicate(c.str("mesh", "shape"));
  std::vector<DualGraph> graphs;
  for (int l = 0; l < levels; ++l) {
    const int ax = nx >> l, ay = ny >> l;
    if (ax < 1 || ay < 1) throw Error(ErrorKind::InvalidHierarchy, "grid too coarse for mesh.levels");
    TriMesh mesh = mask_cells(triangulate_unit_square(ax, ay), keep);
    graphs.push_back(dual_graph(mesh));
    if (l == 0) m.finest = std::move(mesh);
  }
  m.hierarchy = build_hierarchy(std::move(graphs), mu);
  return m;
}

CovarianceFactor build_factor(const RunConfig& c, const DualGraph& g) {
  return build_covariance(g.positions, c.real("covariance", "length_scale"), c.real("covariance", "jitter"), g.id);
}

NoiseSchedule build_schedule(const RunConfig& c) {
  NoiseSchedule s;
  s.sigma_min = c.real("schedule", "sigma_min");
  s.sigma_max = c.real("schedule", "sigma_max");
  s.rho = c.real("schedule", "rho");
  s.n_steps = positive(c, "schedule", "steps");
  try {
    s.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, std::string("schedule: ") + e.what());
  }
  return s;
}

NetConfig build_net_config(const RunConfig& c) {
  NetConfig n;
  n.hidden = positive(c, "model", "hidden");
  n.levels = positive(c, "mesh", "levels");
  n.convs_per_level = static_cast<int>(c.integer("model", "convs_per_level"));
  n.patch = static_cast<int>(c.integer("model", "patch"));
  n.mu = c.real("model", "mu");
  n.time_dim = static_cast<int>(c.integer("model", "time_dim"));
  n.omega_scale = c.real("model", "omega_scale");
  n.mixing = mixing_mode_from_string(c.str("model", "mixing"));
  n.sigma_min = c.real("schedule", "sigma_min");
  n.sigma_max = c.real("schedule", "sigma_max");
  try {
    n.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, std::string("model: ") + e.what());
  }
  return n;
}

BlobParams build_blob_params(const RunConfig& c) {
  BlobParams p;
  p.max_inclusions = positive(c, "data", "max_inclusions");
  p.background = c.real("data", "background");
  p.min_conductivity = c.real("data", "min_conductivity");
  p.semi_axis_min = c.real("data", "semi_axis_min");
  p.semi_axis_max = c.real("data", "semi_axis_max");
  p.ratio_min = c.real("data", "ratio_min");
  p.ratio_max = c.real("data", "ratio_max");
  p.depth_min = c.real("data", "depth_min");
  p.depth_max = c.real("data", "depth_max");
  p.containment = c.real("data", "containment");
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, std::string("data: ") + e.what());
  }
  return p;
}

std::string data_dir(const RunConfig& c, const Options& o) { return o.data.empty() ? c.str("data", "dir") : o.data; }

std::vector<Field> load_training_fields(const std::string& dir, const DualGraph& g) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  require(static_cast<bool>(in), ErrorKind::IOError, "missing manifest.json in '" + dir + "'");
  const json manifest = json::parse(in, nullptr, false);
  require(!manifest.is_discarded() && manifest.contains("graph_hash"), ErrorKind::ParseError, "malformed manifest");
  if (manifest["graph_hash"].get<std::string>() != hex64(g.id)) {
    throw Error(ErrorKind::GraphMismatch, "dataset '" + dir + "' was generated on a different mesh");
  }
  auto fields = load_split(dir, "train", g.id);
  require(!fields.empty(), ErrorKind::IOError, "training split is empty");
  return fields;
}

/// Gaussian fit (mean, sample covariance) to the training split, or N(0, C) without data.
std::unique_ptr<GaussianOracleDenoiser> build_oracle(const RunConfig& c, const Options& o, const DualGraph& g,
                                                     const CovarianceFactor& factor, json& info) {
  const std::string dir = data_dir(c, o);
  if (dir.empty()) {
    info["denoiser"] = "oracle:grf";
    return std::make_unique<GaussianOracleDenoiser>(Field::zeros(factor.size(), 1, g.id), factor.kernel_matrix, factor);
  }
  const auto fields = load_training_fields(dir, g);
  const auto n = factor.size();
  Vector mean = Vector::Zero(n);
  for (const auto& f : fields) mean += f.values.col(0);
  mean /= static_cast<double>(fields.size());
  Matrix cov = Matrix::Zero(n, n);
  for (const auto& f : fields) {
    const Vector d = f.values.col(0) - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(std::max<std::size_t>(fields.size() - 1, 1));
  info["denoiser"] = "oracle:dataset";
  info["data"] = dir;
  return std::make_unique<GaussianOracleDenoiser>(Field(Matrix(mean), g.id), cov, factor);
}

struct DenoiserHandle {
  std::unique_ptr<Denoiser> owned;
  const Denoiser& get() const { return *owned; }
};

DenoiserHandle build_denoiser(const RunConfig& c, const Options& o, const MeshSetup& m,
                              const CovarianceFactor& factor, json& info) {
  std::string ckpt = o.checkpoint;
  const std::string choice = c.str("sample", "denoiser");
  if (ckpt.empty() && choice != "oracle") ckpt = choice;
  if (!ckpt.empty()) {
    auto ck = io::load_checkpoint(ckpt);
    info["denoiser"] = "checkpoint";
    info["checkpoint"] = ckpt;
    return {std::make_unique<MiniGrifdirNet>(ck.instantiate(m.hierarchy))};
  }
  return {build_oracle(c, o, m.graph(), factor, info)};
}

// ---- output helpers ----------------------------------------------------------

fs::path prepare_out(const RunConfig& c) {
  const fs::path out = c.str("run", "out");
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec, ErrorKind::IOError, "cannot create output directory '" + out.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IOError, "cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

void write_fields(const fs::path& dir, const std::vector<Field>& fields) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::IOError, "cannot create '" + dir.string() + "'");
  for (std::size_t k = 0; k < fields.size(); ++k) io::save_field((dir / sample_file_name(k)).string(), fields[k]);
}

std::vector<Field> read_fields(const fs::path& dir, GraphId graph) {
  require(fs::is_directory(dir), ErrorKind::IOError, "missing directory '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".fld") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Field> out;
  for (const auto& f : files) out.push_back(io::load_field(f.string(), graph));
  require(!out.empty(), ErrorKind::IOError, "no .fld files in '" + dir.string() + "'");
  return out;
}

/// Runs `draw(i)` for i < count on up to `threads` workers; results land in index order.
std::vector<Field> parallel_draws(std::size_t count, int threads, const std::function<Field(std::size_t)>& draw) {
  std::vector<Field> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        out[i] = draw(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---- commands ----------------------------------------------------------------

json cmd_mesh(const RunConfig& c, const Options&) {
  const auto out = prepare_out(c);
  const auto m = build_mesh(c);
  save_mesh(m.finest, (out / "mesh.txt").string());
  json levels = json::array();
  for (std::size_t l = 0; l < m.hierarchy.level_count(); ++l) {
    levels.push_back({{"nodes", m.hierarchy.levels[l].node_count()},
                      {"edges", m.hierarchy.levels[l].edges.size()},
                      {"median_edge", m.hierarchy.median_edge[l]},
                      {"radius", m.hierarchy.radii[l]},
                      {"graph_hash", hex64(m.hierarchy.levels[l].id)}});
  }
  write_json(out / "hierarchy.json", {{"mu", m.hierarchy.mu}, {"levels", levels}});
  return {{"outputs", {"mesh.txt", "hierarchy.json"}},
          {"vertices", m.finest.vertex_count()},
          {"triangles", m.finest.triangle_count()}};
}

json cmd_gen_data(const RunConfig& c, const Options&) {
  const auto out = prepare_out(c);
  const auto m = build_mesh(c);
  const auto params = build_blob_params(c);
  const auto count = static_cast<std::size_t>(positive(c, "data", "count"));
  const auto summary = generate_dataset(m.graph(), params, Domain::from_shape(c.str("mesh", "shape")), count,
                                        c.real("data", "train_fraction"), root_seed(c), out);
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
  return {{"outputs", {"manifest.json", "train/", "test/"}},
          {"train", summary.train},
          {"test", summary.test},
          {"warnings", summary.warnings}};
}

json cmd_train(const RunConfig& c, const Options& o) {
  const auto out = prepare_out(c);
  const auto m = build_mesh(c);
  const auto factor = build_factor(c, m.graph());
  const std::string dir = data_dir(c, o);
  if (dir.empty()) throw Error(ErrorKind::ConfigError, "train needs a dataset (--data or data.dir)");
  const auto fields = load_training_fields(dir, m.graph());
  MiniGrifdirNet net(build_net_config(c), m.hierarchy, root_seed(c));
  TrainConfig tc;
  tc.batch_size = positive(c, "train", "batch_size");
  tc.iterations = static_cast<int>(c.integer("train", "iterations"));
  tc.learning_rate = c.real("train", "lr");
  tc.beta1 = c.real("train", "beta1");
  tc.beta2 = c.real("train", "beta2");
  tc.seed = root_seed(c);
  tc.threads = positive(c, "run", "threads");
  const auto result = train_denoiser(net, fields, factor, build_schedule(c), tc);
  io::save_checkpoint((out / "checkpoint.grif").string(), net);
  std::ofstream csv(out / "loss.csv");
  csv << "iteration,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < result.loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.loss[i]);
    csv << i << ',' << buf << '\n';
  }
  json info = {{"outputs", {"checkpoint.grif", "loss.csv"}},
               {"data", dir},
               {"parameters", net.parameter_count()},
               {"training_examples", fields.size()}};
  if (!result.loss.empty()) {
    info["initial_loss"] = result.loss.front();
    info["final_loss"] = result.loss.back();
  }
  return info;
}

json cmd_sample(const RunConfig& c, const Options& o) {
  const auto out = prepare_out(c);
  const auto m = build_mesh(c);
  const auto factor = build_factor(c, m.graph());
  const auto schedule = build_schedule(c);
  json info;
  const auto den = build_denoiser(c, o, m, factor, info);
  const auto count = static_cast<std::size_t>(o.count ? *o.count : positive(c, "sample", "count"));
  const auto samples = parallel_draws(count, positive(c, "run", "threads"), [&](std::size_t i) {
    Rng rng(chain_seed(c, i));
    return heun_sample(den.get(), schedule, factor, rng);
  });
  write_fields(out / "samples", samples);
  info["outputs"] = {"samples/"};
  info["count"] = count;
  return info;
}

struct ObservationSetup {
  std::shared_ptr<const ForwardOperator> op;
  Vector y;
  std::optional<Field> truth;
};

ObservationSetup build_observation(const RunConfig& c, const Options& o, const MeshSetup& m, const fs::path& out) {
  const double noise = c.real("guidance", "noise_std");
  const auto& g = m.graph();
  const auto n = static_cast<Eigen::Index>(g.node_count());
  ObservationSetup s;
  if (!o.observation.empty()) {
    const auto obs = io::load_observation(o.observation);
    if (const auto* sensors = std::get_if<io::SensorObservation>(&obs)) {
      s.op = std::make_shared<SparseSensorOperator>(sensors->sensors, n, noise, g.id);
      s.y = sensors->values;
      std::ofstream copy(out / "observation.txt");
      io::write_observation(copy, *sensors);
    } else {
      const auto& p = std::get<io::PoissonObservation>(obs);
      auto sys = assemble_poisson(m.finest);
      const Field u = io::load_field(p.field_path);
      require(u.nodes() == sys.vertex_count(), ErrorKind::ShapeMismatch, "Poisson observation length mismatch");
      s.op = poisson_operator(std::move(sys), noise);
      s.y = u.values.col(0);
      io::save_field((out / "observation.fld").string(), u);
      std::ofstream copy(out / "observation.txt");
      io::write_observation(copy, io::PoissonObservation{"observation.fld"});
    }
  } else if (!o.truth.empty()) {
    Field truth = io::load_field(o.truth, g.id);
    require(truth.nodes() == n && truth.channels() == 1, ErrorKind::ShapeMismatch, "truth field shape mismatch");
    const int count = static_cast<int>(std::min<long long>(c.integer("guidance", "sensors"), n));
    require(count >= 0, ErrorKind::ConfigError, "guidance.sensors must be non-negative");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), Rng(derive_seed(root_seed(c), "sensors")));
    io::SensorObservation obs;
    obs.sensors.assign(order.begin(), order.begin() + count);
    std::sort(obs.sensors.begin(), obs.sensors.end());
    Rng rng(derive_seed(root_seed(c), "observation"));
    obs.values.resize(count);
    for (int k = 0; k < count; ++k) {
      obs.values[k] = truth.values(obs.sensors[k], 0) + noise * std::normal_distribution<double>()(rng);
    }
    s.op = std::make_shared<SparseSensorOperator>(obs.sensors, n, noise, g.id);
    s.y = obs.values;
    std::ofstream copy(out / "observation.txt");
    io::write_observation(copy, obs);
    io::save_field((out / "truth.fld").string(), truth);
    s.truth = std::move(truth);
  } else {
    throw Error(ErrorKind::ConfigError, "posterior needs --observation or --truth");
  }
  return s;
}

json cmd_posterior(const RunConfig& c, const Options& o) {
  const auto out = prepare_out(c);
  const auto m = build_mesh(c);
  const auto factor = build_factor(c, m.graph());
  const auto schedule = build_schedule(c);
  json info;
  const auto den = build_denoiser(c, o, m, factor, info);
  const auto obs = build_observation(c, o, m, out);
  const Potential pot(obs.op, obs.y);
  GuidanceConfig g;
  g.weight = c.real("guidance", "weight");
  g.precondition_with_C = c.boolean("guidance", "precondition");
  g.daps_levels = positive(c, "guidance", "daps_levels");
  g.langevin_steps = static_cast<int>(c.integer("guidance", "langevin_steps"));
  g.eta0 = c.real("guidance", "eta0");
  try {
    g.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, std::string("guidance: ") + e.what());
  }
  const std::string method = o.method ? *o.method : c.str("guidance", "method");
  if (method != "dps" && method != "daps") throw Error(ErrorKind::ConfigError, "guidance.method must be dps or daps");
  const auto chains = static_cast<std::size_t>(o.chains ? *o.chains : positive(c, "guidance", "chains"));
  const auto samples = parallel_draws(chains, positive(c, "run", "threads"), [&](std::size_t i) {
    Rng rng(chain_seed(c, i));
    return method == "dps" ? fun_dps_sample(den.get(), schedule, factor, pot, g, rng)
                           : fun_daps_sample(den.get(), schedule, factor, pot, g, rng);
  });
  write_fields(out / "chains", samples);
  Field mean = Field::zeros(samples.front().nodes(), samples.front().channels());
  for (const auto& s : samples) mean.values += s.values;
  mean.values /= static_cast<double>(samples.size());
  io::save_field((out / "mean.fld").string(), mean);
  info["outputs"] = {"chains/", "mean.fld", "observation.txt"};
  info["method"] = method;
  info["chains"] = chains;
  info["observations"] = obs.y.size();
  if (obs.truth) info["outputs"].push_back("truth.fld");
  return info;
}

json metric_line(const std::string& metric, const std::string& label, const std::vector<double>& values, std::size_t K,
                 std::uint64_t seed) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return {{"metric", metric}, {"config", label}, {"mean", mean}, {"std", sd}, {"n", values.size()}, {"K", K}, {"seed", seed}};
}

json cmd_eval(const RunConfig& c, const Options& o) {
  const auto out = prepare_out(c);
  const auto m = build_mesh(c);
  const auto& g = m.graph();
  const std::string label = o.label.empty() ? c.str("guidance", "method") : o.label;
  const auto seed = root_seed(c);
  std::vector<json> lines;

  if (!o.ensembles.empty()) {
    SampleEnsemble ens;
    std::vector<double> es, sq;
    std::size_t K = 0;
    for (const auto& dir : o.ensembles) {
      ens.samples.push_back(read_fields(fs::path(dir) / "chains", g.id));
      ens.truths.push_back(io::load_field((fs::path(dir) / "truth.fld").string(), g.id));
      K = ens.samples.back().size();
      es.push_back(energy_score(ens.samples.back(), ens.truths.back()));
      SampleEnsemble one{{ens.samples.back()}, {ens.truths.back()}};
      const double r = rmse_posterior_mean(one);
      sq.push_back(r);
    }
    const double rmse = rmse_posterior_mean(ens);
    json line = metric_line("rmse", label, sq, K, seed);
    line["mean"] = rmse;  // aggregate over observations; std is over per-observation errors
    lines.push_back(line);
    lines.push_back(metric_line("energy_score", label, es, K, seed));
  }
  if (!o.samples.empty()) {
    if (o.reference.empty()) throw Error(ErrorKind::ConfigError, "eval --samples needs --reference");
    const auto samples = read_fields(o.samples, g.id);
    const auto reference = read_fields(o.reference, g.id);
    const double ell = c.real("eval", "mmd_length_scale");
    const auto mmd = mmd_unbiased(samples, reference, ell);
    json line = metric_line("mmd2_u", label, {mmd.mmd2}, samples.size(), seed);
    line["signed_root"] = mmd.signed_root;
    line["reference_count"] = reference.size();
    lines.push_back(line);
    if (o.noise_baseline) {
      const auto factor = build_factor(c, g);
      Rng rng(derive_seed(seed, "eval.noise"));
      const auto noise = sample_grf(factor, samples.size(), rng);
      const auto base = mmd_unbiased(noise, reference, ell);
      json b = metric_line("mmd2_u", "noise", {base.mmd2}, noise.size(), seed);
      b["signed_root"] = base.signed_root;
      b["reference_count"] = reference.size();
      lines.push_back(b);
    }
  }
  if (lines.empty()) throw Error(ErrorKind::ConfigError, "eval needs --ensemble or --samples/--reference");

  std::ofstream jsonl(out / "metrics.jsonl");
  std::ofstream csv(out / "metrics.csv");
  csv << "metric,config,mean,std,n,K,seed\n";
  for (const auto& l : lines) {
    jsonl << l.dump() << "\n";
    csv << l["metric"].get<std::string>() << ',' << l["config"].get<std::string>() << ',' << l["mean"].dump() << ','
        << l["std"].dump() << ',' << l["n"] << ',' << l["K"] << ',' << l["seed"] << '\n';
  }
  return {{"outputs", {"metrics.jsonl", "metrics.csv"}}, {"metrics", lines}};
}

json error_record(const std::string& command, const std::string& kind, const std::string& message) {
  return {{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}, {"version", kVersion}};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Many short-lived multi-megabyte temporaries; keep them on the heap instead of mmap/trim churn.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"Function-space diffusion on FEM meshes"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Globals g;
  Options o;
  app.add_option("--config", g.config_path, "Sectioned key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override as section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "Root seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads for chains and batches")->check(CLI::PositiveNumber);

  app.add_subcommand("mesh", "Build the mesh and hierarchy");
  app.add_subcommand("gen-data", "Generate a Gaussian-blob dataset");
  auto* train = app.add_subcommand("train", "Train the denoiser");
  train->add_option("--data", o.data, "Dataset directory");
  auto* sample = app.add_subcommand("sample", "Unconditional samples");
  auto* post = app.add_subcommand("posterior", "Posterior samples with Fun-DPS or Fun-DAPS");
  for (auto* sc : {sample, post}) {
    sc->add_option("--checkpoint", o.checkpoint, "Trained checkpoint (default: oracle denoiser)");
    sc->add_option("--data", o.data, "Dataset for the oracle's Gaussian fit");
  }
  sample->add_option("--count", o.count, "Number of samples")->check(CLI::PositiveNumber);
  post->add_option("--observation", o.observation, "Observation file");
  post->add_option("--truth", o.truth, "Ground-truth field; sensors are drawn from it");
  post->add_option("--method", o.method, "dps or daps")->check(CLI::IsMember({"dps", "daps"}));
  post->add_option("--chains", o.chains, "Number of chains")->check(CLI::PositiveNumber);
  auto* eval = app.add_subcommand("eval", "Metric report");
  eval->add_option("--ensemble", o.ensembles, "Posterior output directory (repeatable)");
  eval->add_option("--samples", o.samples, "Directory of sample fields");
  eval->add_option("--reference", o.reference, "Directory of reference fields");
  eval->add_flag("--noise-baseline", o.noise_baseline, "Also report MMD of GRF noise against the reference");
  eval->add_option("--label", o.label, "Configuration label for the report");
  for (auto* sc : app.get_subcommands({})) sc->fallthrough();

  std::string command = "unknown";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_record(command, "UsageError", e.what()).dump() << "\n";
    return 2;
  }
  command = app.get_subcommands().front()->get_name();

  const auto start = std::chrono::steady_clock::now();
  std::optional<RunConfig> config;
  try {
    config = load_config(g);
    json info;
    if (command == "mesh") info = cmd_mesh(*config, o);
    else if (command == "gen-data") info = cmd_gen_data(*config, o);
    else if (command == "train") info = cmd_train(*config, o);
    else if (command == "sample") info = cmd_sample(*config, o);
    else if (command == "posterior") info = cmd_posterior(*config, o);
    else info = cmd_eval(*config, o);
    json run = {{"status", "ok"},
                {"command", command},
                {"argv", std::vector<std::string>(argv, argv + argc)},
                {"version", kVersion},
                {"compiler", __VERSION__},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"seed", root_seed(*config)},
                {"config_hash", config_hash(*config)},
                {"config", config_json(*config)},
                {"elapsed_seconds",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
                {"result", info}};
    write_json(fs::path(config->str("run", "out")) / "run.json", run);
    return 0;
  } catch (const Error& e) {
    const json rec = error_record(command, to_string(e.kind()), e.what());
    std::cerr << rec.dump() << "\n";
    std::optional<fs::path> dest;
    if (config) dest = config->str("run", "out");
    else if (g.out) dest = *g.out;
    if (dest) {
      std::error_code ec;
      const fs::path out = *dest;
      fs::create_directories(out, ec);
      if (!ec) std::ofstream(out / "run.json") << rec.dump(2) << "\n";
    }
    return e.kind() == ErrorKind::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << error_record(command, "InternalError", e.what()).dump() << "\n";
    return 1;
  }
}
