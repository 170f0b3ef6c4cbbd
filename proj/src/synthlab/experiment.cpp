#include "sense/synthlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "sense/diffcore/tensor_util.hpp"
#include "sense/error.hpp"
#include "sense/tilestore/transform.hpp"

namespace sense::synthlab {

using latentdecode::HeadKind;
using nlohmann::json;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::real_only: return "real_only";
    case Strategy::mixed: return "mixed";
    case Strategy::synthetic_only: return "synthetic_only";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "real_only") return Strategy::real_only;
  if (s == "mixed") return Strategy::mixed;
  if (s == "synthetic_only") return Strategy::synthetic_only;
  throw Error(ErrorKind::invalid_argument, "unknown strategy '" + s + "'");
}

void ExperimentPlan::validate() const {
  if (strategies.empty()) throw Error(ErrorKind::invalid_argument, "plan.strategies: empty");
  if (real_fractions.empty()) throw Error(ErrorKind::invalid_argument, "plan.real_fractions: empty");
  for (double f : real_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::invalid_argument, "plan.real_fractions: values must be in (0, 1]");
  }
  if (seeds.empty()) throw Error(ErrorKind::invalid_argument, "plan.seeds: empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw Error(ErrorKind::invalid_argument, "plan.seeds: duplicates");
  }
  if (head.epochs < 1) throw Error(ErrorKind::invalid_argument, "plan.head.epochs: must be positive");
  if (predictor_train.steps < 1) throw Error(ErrorKind::invalid_argument, "plan.predictor.steps: must be positive");
  if (generation_chunk < 1) throw Error(ErrorKind::invalid_argument, "plan.generation_chunk: must be positive");
}

json to_json(const ExperimentPlan& p) {
  std::vector<std::string> strategies;
  for (auto s : p.strategies) strategies.push_back(to_string(s));
  return json{{"strategies", strategies},
              {"real_fractions", p.real_fractions},
              {"seeds", p.seeds},
              {"synthetic_count", p.synthetic_count},
              {"target", latentdecode::to_string(p.target)},
              {"head",
               {{"epochs", p.head.epochs},
                {"batch_size", p.head.batch_size},
                {"lr", p.head.lr},
                {"t_star", p.head.t_star},
                {"class_weighted", p.head.class_weighted}}},
              {"predictor",
               {{"width", p.predictor.width},
                {"steps", p.predictor_train.steps},
                {"batch_size", p.predictor_train.batch_size},
                {"lr", p.predictor_train.lr},
                {"class_weighted", p.predictor_train.class_weighted}}},
              {"generation_chunk", p.generation_chunk}};
}

ExperimentPlan experiment_plan_from_json(const json& j) {
  ExperimentPlan p;
  try {
    if (j.contains("strategies")) {
      p.strategies.clear();
      for (const auto& s : j["strategies"]) p.strategies.push_back(strategy_from_string(s.get<std::string>()));
    }
    p.real_fractions = j.value("real_fractions", p.real_fractions);
    p.seeds = j.value("seeds", p.seeds);
    p.synthetic_count = j.value("synthetic_count", p.synthetic_count);
    p.target = latentdecode::head_kind_from_string(j.value("target", std::string("energy")));
    p.head.class_weighted = p.target == HeadKind::energy;
    if (j.contains("head")) {
      const auto& h = j["head"];
      p.head.epochs = h.value("epochs", p.head.epochs);
      p.head.batch_size = h.value("batch_size", p.head.batch_size);
      p.head.lr = h.value("lr", p.head.lr);
      p.head.t_star = h.value("t_star", p.head.t_star);
      p.head.class_weighted = h.value("class_weighted", p.head.class_weighted);
    }
    if (j.contains("predictor")) {
      const auto& r = j["predictor"];
      p.predictor.width = r.value("width", p.predictor.width);
      p.predictor_train.steps = r.value("steps", p.predictor_train.steps);
      p.predictor_train.batch_size = r.value("batch_size", p.predictor_train.batch_size);
      p.predictor_train.lr = r.value("lr", p.predictor_train.lr);
      p.predictor_train.class_weighted = r.value("class_weighted", p.predictor_train.class_weighted);
    }
    p.generation_chunk = j.value("generation_chunk", p.generation_chunk);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_argument, std::string("experiment plan: ") + e.what());
  }
  p.predictor.n_classes = latentdecode::head_classes(p.target);
  p.validate();
  return p;
}

double ExperimentResult::median_miou(Strategy s, double fraction) const {
  std::vector<double> v;
  for (const auto& a : arms) {
    if (a.strategy == s && a.real_fraction == fraction) v.push_back(a.segmentation.miou);
  }
  if (v.empty()) throw Error(ErrorKind::not_found, std::string("no arms for ") + to_string(s));
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string ExperimentResult::sweep_table() const {
  std::vector<double> fractions;
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds;
  for (const auto& a : arms) {
    if (std::find(fractions.begin(), fractions.end(), a.real_fraction) == fractions.end()) fractions.push_back(a.real_fraction);
    if (std::find(strategies.begin(), strategies.end(), a.strategy) == strategies.end()) strategies.push_back(a.strategy);
    if (std::find(seeds.begin(), seeds.end(), a.seed) == seeds.end()) seeds.push_back(a.seed);
  }
  std::sort(fractions.begin(), fractions.end());
  std::ostringstream out;
  out << "real_fraction\tstrategy\tmedian_miou";
  for (auto s : seeds) out << "\tmiou_seed_" << s;
  out << "\n";
  char buf[32];
  for (double f : fractions) {
    for (auto s : strategies) {
      std::snprintf(buf, sizeof(buf), "%.2f", f);
      out << buf << "\t" << to_string(s);
      std::snprintf(buf, sizeof(buf), "%.6f", median_miou(s, f));
      out << "\t" << buf;
      for (auto seed : seeds) {
        auto it = std::find_if(arms.begin(), arms.end(), [&](const ArmResult& a) {
          return a.strategy == s && a.real_fraction == f && a.seed == seed;
        });
        if (it == arms.end()) {
          out << "\t-";
        } else {
          std::snprintf(buf, sizeof(buf), "%.6f", it->segmentation.miou);
          out << "\t" << buf;
        }
      }
      out << "\n";
    }
  }
  return out.str();
}

std::vector<std::size_t> real_subset(std::size_t pool_size, double fraction, std::uint64_t seed) {
  if (pool_size == 0) throw Error(ErrorKind::invalid_argument, "real subset: empty pool");
  std::vector<std::size_t> order(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) order[i] = i;
  std::mt19937_64 rng(diffcore::stable_seed("real-subset", seed));
  // Fisher-Yates with explicit draws so the permutation is stable across standard libraries.
  for (std::size_t i = pool_size - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool_size)));
  order.resize(std::clamp<std::size_t>(k, 1, pool_size));
  return order;
}

void check_no_leakage(const std::vector<std::string>& training_ids, const std::vector<std::string>& test_ids) {
  std::set<std::string> test(test_ids.begin(), test_ids.end());
  for (const auto& id : training_ids) {
    if (test.count(id)) throw Error(ErrorKind::leakage, "test tile '" + id + "' appears in a training set");
  }
}

namespace {

std::vector<float> layer_values(const std::vector<tiles::Tile>& tiles, HeadKind kind) {
  std::vector<float> values;
  for (const auto& t : tiles) {
    auto v = kind == HeadKind::height ? t.height.values() : t.energy.values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return values;
}

tiles::BinEdges fit_bins(const std::vector<tiles::Tile>& tiles, HeadKind kind) {
  return tiles::fit_bin_edges(layer_values(tiles, kind), kind == HeadKind::height
                                                             ? tiles::DiscretizationScheme::height_quintile_4
                                                             : tiles::DiscretizationScheme::energy_tertile);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentInputs& in, const ArmCallback& on_arm) {
  plan.validate();
  if (!in.backbone || !in.branch) throw Error(ErrorKind::uninitialized, "experiment: backbone and control required");
  if (in.train_pool.empty() || in.test.empty()) throw Error(ErrorKind::invalid_argument, "experiment: empty split");
  ExperimentResult result;
  for (const auto& t : in.test) result.test_ids.push_back(t.tile_id);
  {
    std::vector<std::string> pool_ids;
    for (const auto& t : in.train_pool) pool_ids.push_back(t.tile_id);
    check_no_leakage(pool_ids, result.test_ids);
  }
  auto& backbone = *in.backbone;
  auto& branch = *in.branch;
  const HeadKind kind = plan.target;
  const int n_classes = latentdecode::head_classes(kind);
  const bool need_synthetic = std::any_of(plan.strategies.begin(), plan.strategies.end(),
                                          [](Strategy s) { return s != Strategy::real_only; });

  for (double fraction : plan.real_fractions) {
    for (auto seed : plan.seeds) {
      auto rows = real_subset(in.train_pool.size(), fraction, seed);
      std::set<std::size_t> in_real(rows.begin(), rows.end());
      std::vector<tiles::Tile> real;
      for (auto r : rows) real.push_back(in.train_pool[r]);
      std::vector<std::size_t> held;
      {
        auto all = real_subset(in.train_pool.size(), 1.0, seed);
        for (auto r : all) {
          if (!in_real.count(r)) held.push_back(r);
        }
      }

      auto bins = fit_bins(real, kind);
      auto labeled = latentdecode::labeled_set_from_tiles(real, kind, bins);
      auto test_labeled = latentdecode::labeled_set_from_tiles(in.test, kind, bins);
      auto real_data = SegmentationData::from_labeled(labeled);
      std::optional<metrics::EnergyBins> energy_bins;
      if (kind == HeadKind::energy) {
        auto values = layer_values(real, kind);
        energy_bins = metrics::EnergyBins{bins.edges, tiles::bin_medians(values, bins)};
      }

      SegmentationData synthetic;
      double gap = 0.0;
      if (need_synthetic) {
        torch::manual_seed(diffcore::stable_seed("head", seed));
        latentdecode::DecoderHead head(latentdecode::head_config_for(backbone, kind));
        auto ho = plan.head;
        ho.seed = seed;
        ho.on_epoch = nullptr;
        latentdecode::train_head(backbone, branch, head, labeled, ho);

        const long n_syn = plan.synthetic_count < 0 ? static_cast<long>(held.size()) : plan.synthetic_count;
        const auto& sources = held.empty() ? rows : held;
        std::vector<GenerationRequest> requests;
        for (long j = 0; j < n_syn; ++j) {
          const auto& src = in.train_pool[sources[static_cast<std::size_t>(j) % sources.size()]];
          const auto round = static_cast<std::uint64_t>(j) / sources.size();
          requests.push_back({src.constraints, src.city, src.density, diffcore::stable_seed(src.tile_id, seed * 1000 + round),
                              src.tile_id});
        }
        if (!requests.empty()) {
          auto batch = sample_annotated(backbone, branch, {&head}, ho.t_star, requests, plan.generation_chunk);
          synthetic.images = batch.images;
          synthetic.labels = batch.labels[0];
          synthetic.valid = torch::ones_like(synthetic.labels, torch::kBool);
          for (const auto& r : requests) synthetic.tile_ids.push_back(r.source_tile_id);
          gap = max_marginal_gap(class_marginals(synthetic.labels, synthetic.valid, n_classes),
                                 class_marginals(labeled.labels, labeled.valid, n_classes));
        }
      }

      for (auto strategy : plan.strategies) {
        SegmentationData data;
        switch (strategy) {
          case Strategy::real_only: data = real_data; break;
          case Strategy::mixed: data = SegmentationData::concat(real_data, synthetic); break;
          case Strategy::synthetic_only: data = synthetic; break;
        }
        if (data.size() == 0) throw Error(ErrorKind::invalid_argument, std::string("experiment: no training data for ") + to_string(strategy));
        check_no_leakage(data.tile_ids, result.test_ids);
        PredictorConfig pc = plan.predictor;
        pc.n_classes = n_classes;
        auto po = plan.predictor_train;
        po.seed = diffcore::stable_seed("predictor", seed);
        po.on_step = nullptr;
        auto model = train_reference_predictor(data, pc, po);
        auto pred = predict_labels(model, test_labeled.corpus.images);

        ArmResult arm;
        arm.strategy = strategy;
        arm.real_fraction = fraction;
        arm.seed = seed;
        arm.n_real = strategy == Strategy::synthetic_only ? 0 : real_data.size();
        arm.n_synthetic = strategy == Strategy::real_only ? 0 : synthetic.size();
        arm.segmentation = segmentation_metrics(pred, test_labeled.labels, test_labeled.valid, n_classes);
        if (energy_bins) arm.calibration = energy_report(pred, in.test, *energy_bins);
        arm.synthetic_marginal_gap = gap;
        if (on_arm) on_arm(arm);
        result.arms.push_back(std::move(arm));
      }
    }
  }
  return result;
}

void write_experiment(const std::filesystem::path& dir, const ExperimentPlan& plan, const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorKind::io, "cannot write " + p.string());
    f << text;
  };
  write(dir / "plan.json", to_json(plan).dump(2) + "\n");
  const auto& names = plan.target == HeadKind::energy ? metrics::energy_class_names() : metrics::height_class_names();
  for (const auto& a : result.arms) {
    char name[96];
    std::snprintf(name, sizeof(name), "arm_%s_f%.2f_s%llu.json", to_string(a.strategy), a.real_fraction,
                  static_cast<unsigned long long>(a.seed));
    json j{{"strategy", to_string(a.strategy)},
           {"real_fraction", a.real_fraction},
           {"seed", a.seed},
           {"n_real", a.n_real},
           {"n_synthetic", a.n_synthetic},
           {"synthetic_marginal_gap_pp", a.synthetic_marginal_gap},
           {"segmentation", metrics::to_json(a.segmentation, names)}};
    if (a.calibration) j["calibration"] = metrics::to_json(*a.calibration);
    write(dir / name, j.dump(2) + "\n");
  }
  std::ostringstream ids;
  for (const auto& id : result.test_ids) ids << id << "\n";
  write(dir / "test_manifest.txt", ids.str());
  write(dir / "sweep.tsv", result.sweep_table());
}

}  // namespace sense::synthlab
