#include <torch/torch.h>

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"
#include "sense/gateway/api.hpp"
#include "sense/synthlab/experiment.hpp"
#include "sense/tilestore/qc.hpp"
#include "sense/tilestore/raster_io.hpp"

using namespace sense;
using nlohmann::json;
namespace fs = std::filesystem;
using latentdecode::HeadKind;

namespace {

struct Context {
  std::optional<fs::path> config_path;
  std::string data_root, checkpoint_dir, output_dir;
  gateway::GatewayConfig config;
  std::string command;
  json args = json::object();
};

void resolve_config(Context& ctx) {
  ctx.config = gateway::load_config(ctx.config_path);
  if (!ctx.data_root.empty()) ctx.config.data_root = ctx.data_root;
  if (!ctx.checkpoint_dir.empty()) ctx.config.checkpoint_dir = ctx.checkpoint_dir;
  if (!ctx.output_dir.empty()) ctx.config.output_dir = ctx.output_dir;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// One JSON line per run: command, arguments, resolved config, outcome.
void log_run(const Context& ctx, const json& outcome) {
  fs::create_directories(ctx.config.output_dir);
  std::ofstream f(ctx.config.output_dir / "runs.jsonl", std::ios::app);
  f << json{{"time", utc_now()},
            {"command", ctx.command},
            {"args", ctx.args},
            {"config", gateway::to_json(ctx.config)},
            {"outcome", outcome}}
           .dump()
    << "\n";
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument:
    case ErrorKind::shape_mismatch:
    case ErrorKind::degenerate:
      return 2;
    case ErrorKind::not_found:
      return 3;
    case ErrorKind::digest_mismatch:
    case ErrorKind::conflict:
      return 4;
    case ErrorKind::io:
      return 5;
    case ErrorKind::leakage:
      return 6;
    default:
      return 1;
  }
}

diffcore::TrainOptions train_options(int steps, int batch, double lr, std::uint64_t seed) {
  diffcore::TrainOptions o;
  o.steps = steps;
  o.batch_size = batch;
  o.lr = lr;
  o.seed = seed;
  o.log_every = std::max(1, steps / 10);
  o.on_log = [](int s, double l) { std::cerr << "  step " << s << " loss " << l << "\n"; };
  return o;
}

std::vector<tiles::Tile> accepted(const std::vector<tiles::Tile>& in) {
  std::vector<tiles::Tile> out;
  for (const auto& t : in) {
    if (t.qc != tiles::QcStatus::rejected) out.push_back(t);
  }
  return out;
}

// Height labels come from every training tile; energy labels only from
// tiles that passed QC.
std::vector<tiles::Tile> labeled_tiles(const std::vector<tiles::Tile>& in, HeadKind kind) {
  return kind == HeadKind::energy ? accepted(in) : in;
}

const tiles::BinEdges& bins_for(const gateway::BinsFile& b, HeadKind kind) {
  return kind == HeadKind::height ? b.height : b.energy;
}

const std::vector<double>& representative_for(const gateway::BinsFile& b, HeadKind kind) {
  return kind == HeadKind::height ? b.height_representative : b.energy_representative_log;
}

struct HeadRun {
  double test_miou = 0.0;
  double final_loss = 0.0;
};

HeadRun train_and_score_head(diffcore::Backbone& backbone, latentdecode::ControlBranch& branch,
                             const gateway::Corpus& corpus, const gateway::BinsFile& bins, HeadKind kind,
                             const latentdecode::HeadTrainOptions& opts, std::uint64_t init_seed,
                             const std::optional<fs::path>& save_to) {
  auto data = latentdecode::labeled_set_from_tiles(labeled_tiles(corpus.train, kind), kind, bins_for(bins, kind));
  torch::manual_seed(init_seed);
  latentdecode::DecoderHead head(latentdecode::head_config_for(backbone, kind));
  auto log = latentdecode::train_head(backbone, branch, head, data, opts);
  HeadRun r;
  r.final_loss = log.epoch_losses.empty() ? 0.0 : log.epoch_losses.back();
  const auto test = labeled_tiles(corpus.test, kind);
  if (!test.empty()) {
    auto tdata = latentdecode::labeled_set_from_tiles(test, kind, bins_for(bins, kind));
    auto pred = latentdecode::predict_real(backbone, branch, head, tdata.corpus, opts.t_star);
    r.test_miou =
        synthlab::segmentation_metrics(pred, tdata.labels, tdata.valid, latentdecode::head_classes(kind)).miou;
  }
  if (save_to) {
    latentdecode::HeadCheckpointMeta meta{head->config(),
                                          opts.t_star,
                                          backbone.digest(),
                                          diffcore::module_digest(*branch),
                                          log.class_weights,
                                          bins_for(bins, kind).edges,
                                          representative_for(bins, kind)};
    latentdecode::save_head(*save_to, head, meta);
  }
  return r;
}

std::vector<std::pair<std::string, std::string>> read_pairs(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::not_found, "cannot read pairs file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string pred, truth;
    if (!(is >> pred >> truth)) throw Error(ErrorKind::invalid_argument, "pairs file: bad line '" + line + "'");
    out.emplace_back(pred, truth);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"SENSE: constraint-conditioned urban tile synthesis with decoded height and energy labels"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--config", ctx.config_path, "Gateway/pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--data-root", ctx.data_root, "Tile store root");
  app.add_option("--checkpoint-dir", ctx.checkpoint_dir, "Checkpoint directory");
  app.add_option("--output-dir", ctx.output_dir, "Output directory (run log, generated tiles)");

  std::function<json()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Populate the tile store from the oracle city or a MUSE export");
  std::size_t oracle_count = 0, resolution = 64;
  std::string muse_dir;
  std::uint64_t ingest_seed = 2024;
  double test_fraction = 0.2;
  auto* oracle_opt = ingest->add_option("--oracle", oracle_count, "Number of procedural tiles");
  auto* muse_opt = ingest->add_option("--muse", muse_dir, "MUSE export root")->check(CLI::ExistingDirectory);
  oracle_opt->excludes(muse_opt);
  ingest->add_option("--seed", ingest_seed, "Corpus / split seed");
  ingest->add_option("--resolution", resolution, "Oracle tile side in pixels");
  ingest->add_option("--test-fraction", test_fraction, "MUSE test split fraction")->check(CLI::Range(0.0, 1.0));
  ingest->callback([&] {
    ctx.command = "ingest";
    ctx.args = {{"oracle", oracle_count}, {"muse", muse_dir}, {"seed", ingest_seed}, {"resolution", resolution},
                {"test_fraction", test_fraction}};
    action = [&]() -> json {
      tiles::TileStore store(ctx.config.data_root);
      if (!muse_dir.empty()) {
        auto r = gateway::ingest_muse(muse_dir, store, ingest_seed, test_fraction);
        for (const auto& m : r.count_mismatches) std::cerr << "warning: " << m << "\n";
        for (const auto& m : r.missing_layers) std::cerr << "warning: missing layer " << m << "\n";
        std::cout << "ingested " << r.entries.size() << " MUSE tiles into " << store.root() << "\n";
        return {{"tiles", r.entries.size()}, {"count_mismatches", r.count_mismatches.size()}};
      }
      if (oracle_count == 0) throw Error(ErrorKind::invalid_argument, "ingest needs --oracle N or --muse DIR");
      auto entries = gateway::ingest_oracle(store, oracle_count, ingest_seed, resolution);
      std::cout << "ingested " << entries.size() << " oracle tiles into " << store.root() << "\n";
      return {{"tiles", entries.size()}};
    };
  });

  // qc
  auto* qc = app.add_subcommand("qc", "Decide QC status for every tile from its energy null blocks");
  double max_null = 0.25;
  std::string overrides_path;
  qc->add_option("--max-null-fraction", max_null, "Reject when the largest null block exceeds this fraction")
      ->check(CLI::Range(0.0, 1.0));
  qc->add_option("--overrides", overrides_path, "Expert verdicts file")->check(CLI::ExistingFile);
  qc->callback([&] {
    ctx.command = "qc";
    ctx.args = {{"max_null_fraction", max_null}, {"overrides", overrides_path}};
    action = [&]() -> json {
      tiles::TileStore store(ctx.config.data_root);
      std::optional<tiles::QcOverrides> ov;
      if (!overrides_path.empty()) ov = tiles::QcOverrides::load(overrides_path);
      auto s = gateway::run_qc(store, max_null, ov ? &*ov : nullptr);
      for (const auto& [id, reason] : s.rejections) std::cout << "rejected\t" << id << "\t" << reason << "\n";
      std::cout << "accepted " << s.accepted << " rejected " << s.rejected << "\n";
      return {{"accepted", s.accepted}, {"rejected", s.rejected}};
    };
  });

  // discretize
  auto* disc = app.add_subcommand("discretize", "Fit height and energy bin edges on the training split");
  disc->callback([&] {
    ctx.command = "discretize";
    action = [&]() -> json {
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      auto bins = gateway::fit_bins(corpus.train);
      bins.save(ctx.config.bins_path());
      std::cout << bins.to_json().dump(2) << "\n";
      return {{"bins", ctx.config.bins_path().string()}, {"fitted_tiles", bins.fitted_tiles}};
    };
  });

  // train-vae / train-ldm / train-control
  int steps = 0, batch = 16;
  double lr = 0.0;
  std::uint64_t seed = 1;
  std::string model_config;
  auto add_train_opts = [&](CLI::App* c, int default_steps, double default_lr) {
    c->add_option("--steps", steps, "Optimisation steps")->default_val(default_steps);
    c->add_option("--batch", batch, "Batch size")->default_val(16);
    c->add_option("--lr", lr, "Learning rate")->default_val(default_lr);
    c->add_option("--seed", seed, "Training seed")->default_val(1);
  };
  auto train_args = [&] { return json{{"steps", steps}, {"batch", batch}, {"lr", lr}, {"seed", seed}}; };

  auto* tvae = app.add_subcommand("train-vae", "Create a backbone and train its autoencoder on training imagery");
  add_train_opts(tvae, 1500, 1e-3);
  tvae->add_option("--model-config", model_config, "Backbone config JSON")->check(CLI::ExistingFile);
  tvae->callback([&] {
    ctx.command = "train-vae";
    ctx.args = train_args();
    ctx.args["model_config"] = model_config;
    action = [&]() -> json {
      diffcore::BackboneConfig bc;
      if (!model_config.empty()) {
        std::ifstream f(model_config);
        bc = diffcore::backbone_config_from_json(json::parse(f));
      }
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      diffcore::Backbone b(bc, seed);
      auto images = diffcore::ImageCorpus::from_tiles(corpus.train);
      diffcore::train_vae(b, images, train_options(steps, batch, lr, seed));
      json out{{"latent_scale", b.latent_scale}};
      if (!corpus.test.empty()) {
        auto err = diffcore::vae_reconstruction_error(b, diffcore::ImageCorpus::from_tiles(corpus.test).images);
        out["test_reconstruction_error"] = err;
        std::cout << "test reconstruction error per channel: " << err[0] << " " << err[1] << " " << err[2] << "\n";
      }
      fs::create_directories(ctx.config.checkpoint_dir);
      b.save(ctx.config.backbone_path());
      out["digest"] = b.digest();
      std::cout << "saved " << ctx.config.backbone_path() << "\n";
      return out;
    };
  });

  auto* tldm = app.add_subcommand("train-ldm", "Train the latent denoiser of the saved backbone");
  add_train_opts(tldm, 2000, 5e-4);
  tldm->callback([&] {
    ctx.command = "train-ldm";
    ctx.args = train_args();
    action = [&]() -> json {
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      auto b = diffcore::Backbone::load(ctx.config.backbone_path());
      auto log = diffcore::train_ldm(b, diffcore::ImageCorpus::from_tiles(corpus.train),
                                     train_options(steps, batch, lr, seed));
      b.save(ctx.config.backbone_path());
      std::cout << "fixed-draw loss " << log.eval_before << " -> " << log.eval_after << "\n";
      return {{"eval_before", log.eval_before}, {"eval_after", log.eval_after}, {"digest", b.digest()}};
    };
  });

  auto* tctl = app.add_subcommand("train-control", "Train the constraint branch against the frozen backbone");
  add_train_opts(tctl, 2000, 2e-4);
  tctl->callback([&] {
    ctx.command = "train-control";
    ctx.args = train_args();
    action = [&]() -> json {
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      auto b = diffcore::Backbone::load(ctx.config.backbone_path());
      auto branch = geocontrol::make_control_branch(b, seed);
      auto log = geocontrol::train_control(b, branch, diffcore::ImageCorpus::from_tiles(corpus.train),
                                           train_options(steps, batch, lr, seed));
      geocontrol::save_control(ctx.config.control_path(), branch, b);
      json out{{"eval_before", log.eval_before}, {"eval_after", log.eval_after}};
      if (!corpus.test.empty()) {
        auto test = diffcore::ImageCorpus::from_tiles(corpus.test);
        const long k = std::min<long>(32, static_cast<long>(test.size()));
        std::vector<std::uint64_t> seeds;
        for (long i = 0; i < k; ++i) seeds.push_back(seed * 1000 + static_cast<std::uint64_t>(i));
        auto masks = test.constraints.slice(0, 0, k);
        auto imgs = geocontrol::generate_images(
            b, branch, masks, std::vector<std::string>(test.prompts.begin(), test.prompts.begin() + k), seeds);
        out["fidelity"] = geocontrol::constraint_fidelity(imgs, masks);
        std::cout << "constraint fidelity on " << k << " test masks: " << out["fidelity"].get<double>() << "\n";
      }
      std::cout << "saved " << ctx.config.control_path() << "\n";
      return out;
    };
  });

  // train-decoder
  auto* tdec = app.add_subcommand("train-decoder", "Train a height or energy decoder head on frozen features");
  std::string head_kind;
  int epochs = 30, t_star = latentdecode::HeadTrainOptions{}.t_star, head_batch = 16;
  double head_lr = 1e-3;
  std::vector<int> sweep;
  tdec->add_option("kind", head_kind, "height or energy")->required()->check(CLI::IsMember({"height", "energy"}));
  tdec->add_option("--epochs", epochs, "Training epochs");
  tdec->add_option("--t-star", t_star, "Feature extraction timestep");
  tdec->add_option("--batch", head_batch, "Batch size");
  tdec->add_option("--lr", head_lr, "Learning rate");
  tdec->add_option("--seed", seed, "Training seed")->default_val(1);
  tdec->add_option("--sweep-t-star", sweep, "Train once per timestep and report test mIoU; saves nothing");
  tdec->callback([&] {
    ctx.command = "train-decoder";
    ctx.args = {{"kind", head_kind}, {"epochs", epochs}, {"t_star", t_star}, {"batch", head_batch},
                {"lr", head_lr}, {"seed", seed}, {"sweep_t_star", sweep}};
    action = [&]() -> json {
      const auto kind = latentdecode::head_kind_from_string(head_kind);
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      auto bins = gateway::BinsFile::load(ctx.config.bins_path());
      auto b = diffcore::Backbone::load(ctx.config.backbone_path());
      auto branch = geocontrol::load_control(ctx.config.control_path(), b);
      latentdecode::HeadTrainOptions o;
      o.epochs = epochs;
      o.batch_size = head_batch;
      o.lr = head_lr;
      o.seed = seed;
      o.class_weighted = kind == HeadKind::energy;
      o.on_epoch = [](int e, double l) { std::cerr << "  epoch " << e << " loss " << l << "\n"; };
      if (!sweep.empty()) {
        json rows = json::array();
        std::cout << "t_star\ttest_miou\n";
        for (int ts : sweep) {
          o.t_star = ts;
          auto r = train_and_score_head(b, branch, corpus, bins, kind, o, seed, std::nullopt);
          std::cout << ts << "\t" << std::fixed << std::setprecision(4) << r.test_miou << "\n";
          rows.push_back({{"t_star", ts}, {"test_miou", r.test_miou}});
        }
        return {{"sweep", rows}};
      }
      o.t_star = t_star;
      const auto path = ctx.config.head_path(head_kind);
      auto r = train_and_score_head(b, branch, corpus, bins, kind, o, seed, path);
      std::cout << head_kind << " head test mIoU " << r.test_miou << "\nsaved " << path << "\n";
      return {{"test_miou", r.test_miou}, {"final_loss", r.final_loss}};
    };
  });

  // generate
  auto* gen = app.add_subcommand("generate", "Generate annotated tiles from the constraints of real tiles");
  std::string gen_split = "test";
  std::size_t gen_count = 8;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--split", gen_split, "Source split for constraints and densities")
      ->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--count", gen_count, "Tiles to generate");
  gen->add_option("--seed", gen_seed, "Base seed; tile i uses seed + i");
  gen->add_option("--out", gen_out, "Tile store for the results (default <output-dir>/synthetic)");
  gen->callback([&] {
    ctx.command = "generate";
    ctx.args = {{"split", gen_split}, {"count", gen_count}, {"seed", gen_seed}, {"out", gen_out}};
    action = [&]() -> json {
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      const auto& source = gen_split == "train" ? corpus.train : corpus.test;
      if (source.empty()) throw Error(ErrorKind::invalid_argument, "no " + gen_split + " tiles to draw constraints from");
      auto g = synthlab::AnnotatingGenerator::load(ctx.config.backbone_path(), ctx.config.control_path(),
                                                   ctx.config.head_path("height"), ctx.config.head_path("energy"));
      std::vector<synthlab::GenerationRequest> reqs;
      for (std::size_t i = 0; i < gen_count; ++i) {
        const auto& t = source[i % source.size()];
        reqs.push_back({t.constraints, t.city, t.density, gen_seed + i, t.tile_id});
      }
      auto out = g->generate(reqs);
      const fs::path root = gen_out.empty() ? ctx.config.output_dir / "synthetic" : fs::path(gen_out);
      tiles::TileStore store(root);
      std::vector<tiles::ManifestEntry> entries;
      json digests = json::array();
      for (const auto& s : out) {
        auto t = s.tile;
        t.split = tiles::Split::unassigned;
        t.qc = tiles::QcStatus::accepted;
        store.save(t);
        const auto& p = s.provenance;
        std::ofstream(store.tile_dir(t.city, t.tile_id) / "provenance.json")
            << json{{"digest", s.digest()},
                    {"generator_digest", p.generator_digest},
                    {"control_digest", p.control_digest},
                    {"height_head_digest", p.height_head_digest},
                    {"energy_head_digest", p.energy_head_digest},
                    {"seed", p.seed},
                    {"source_tile_id", p.source_tile_id},
                    {"t_star", p.t_star}}
                   .dump(2)
            << "\n";
        entries.push_back({t.tile_id, t.city, t.split, t.qc});
        digests.push_back(s.digest());
        std::cout << t.tile_id << "\t" << s.digest() << "\n";
      }
      store.write_manifest(entries);
      return {{"out", root.string()}, {"digests", digests}};
    };
  });

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Calibrate predicted energy layers against ground truth");
  std::vector<std::string> pair_args;
  std::string pairs_file, report_out, pred_root;
  bool foreground_only = false;
  eval->add_option("--pair", pair_args, "PRED_ID:TRUTH_ID (repeatable)");
  eval->add_option("--pairs-file", pairs_file, "Whitespace-separated pred/truth ids, one pair per line")
      ->check(CLI::ExistingFile);
  eval->add_option("--pred-root", pred_root, "Tile store holding the predictions (default: the data root)");
  eval->add_flag("--foreground-only", foreground_only, "Leave background out of the class means");
  eval->add_option("--report", report_out, "Also write the JSON report here");
  eval->callback([&] {
    ctx.command = "evaluate";
    ctx.args = {{"pairs", pair_args}, {"pairs_file", pairs_file}, {"pred_root", pred_root},
                {"foreground_only", foreground_only}, {"report", report_out}};
    action = [&]() -> json {
      std::vector<std::pair<std::string, std::string>> pairs;
      if (!pairs_file.empty()) pairs = read_pairs(pairs_file);
      for (const auto& p : pair_args) {
        const auto colon = p.find(':');
        if (colon == std::string::npos) throw Error(ErrorKind::invalid_argument, "--pair expects PRED:TRUTH, got " + p);
        pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
      }
      tiles::TileStore truth_store(ctx.config.data_root);
      tiles::TileStore pred_store(pred_root.empty() ? ctx.config.data_root : fs::path(pred_root));
      auto bins = gateway::BinsFile::load(ctx.config.bins_path());
      auto report = gateway::evaluate_tile_pairs(pred_store, truth_store, pairs, bins, foreground_only);
      const auto text = gateway::report_text(report);
      std::cout << text;
      if (!report_out.empty()) {
        std::ofstream f(report_out, std::ios::binary);
        f << text;
      }
      std::cerr << metrics::summary_table(report);
      return {{"pairs", pairs.size()}};
    };
  });

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run the real/mixed/synthetic augmentation study");
  std::string plan_path, exp_out;
  exp->add_option("--plan", plan_path, "Experiment plan JSON (defaults when omitted)")->check(CLI::ExistingFile);
  exp->add_option("--out", exp_out, "Result directory (default <output-dir>/experiment)");
  exp->callback([&] {
    ctx.command = "experiment";
    ctx.args = {{"plan", plan_path}, {"out", exp_out}};
    action = [&]() -> json {
      synthlab::ExperimentPlan plan;
      if (!plan_path.empty()) {
        std::ifstream f(plan_path);
        plan = synthlab::experiment_plan_from_json(json::parse(f));
      }
      plan.validate();
      auto corpus = gateway::load_corpus(tiles::TileStore(ctx.config.data_root), false);
      auto b = diffcore::Backbone::load(ctx.config.backbone_path());
      auto branch = geocontrol::load_control(ctx.config.control_path(), b);
      synthlab::ExperimentInputs in;
      in.backbone = &b;
      in.branch = &branch;
      in.train_pool = labeled_tiles(corpus.train, plan.target);
      in.test = labeled_tiles(corpus.test, plan.target);
      auto result = synthlab::run_experiment(plan, in, [](const synthlab::ArmResult& a) {
        std::cerr << "  " << to_string(a.strategy) << " f=" << a.real_fraction << " seed=" << a.seed
                  << " mIoU=" << a.segmentation.miou << "\n";
      });
      const fs::path dir = exp_out.empty() ? ctx.config.output_dir / "experiment" : fs::path(exp_out);
      synthlab::write_experiment(dir, plan, result);
      std::cout << result.sweep_table();
      return {{"out", dir.string()}, {"plan", synthlab::to_json(plan)}};
    };
  });

  // serve
  auto* srv = app.add_subcommand("serve", "Serve the HTTP gateway");
  srv->callback([&] {
    ctx.command = "serve";
    action = [&]() -> json {
      auto api = gateway::Api::from_config(ctx.config);
      gateway::serve(*api);
      return {};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    resolve_config(ctx);
    const auto start = std::chrono::steady_clock::now();
    json outcome = action();
    outcome["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    outcome["status"] = "ok";
    log_run(ctx, outcome);
    return 0;
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump() << "\n";
    try {
      log_run(ctx, {{"status", "error"}, {"kind", to_string(e.kind())}, {"message", e.what()}});
    } catch (...) {
    }
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}
