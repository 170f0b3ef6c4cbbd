#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sense/energymetrics/report.hpp"
#include "sense/tilestore/raster_io.hpp"

using namespace sense;
using namespace sense::metrics;

namespace {

tiles::ClassMap class_map(std::vector<std::uint8_t> labels, int n_classes) {
  tiles::ClassMap m;
  m.labels = Grid<std::uint8_t>(1, labels.size(), 1);
  std::copy(labels.begin(), labels.end(), m.labels.values().begin());
  m.n_classes = n_classes;
  return m;
}

// Independent per-class oracle computed directly from label vectors.
struct Counts {
  double tp = 0, fp = 0, fn = 0;
};

Counts count_class(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth, int c) {
  Counts k;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] == c, t = truth[i] == c;
    k.tp += p && t;
    k.fp += p && !t;
    k.fn += !p && t;
  }
  return k;
}

}  // namespace

TEST_CASE("nmbe and cvrmse hand cases") {
  std::vector<double> truth{100, 200, 300};
  CHECK(nmbe(truth, truth) == 0.0);
  CHECK(cvrmse(truth, truth) == 0.0);
  std::vector<double> up10{110, 220, 330};
  CHECK(nmbe(truth, up10) == doctest::Approx(10.0));
  std::vector<double> down20{80, 160, 240};
  CHECK(nmbe(truth, down20) == doctest::Approx(-20.0));
  // rmse of {20,40,60} = sqrt((400+1600+3600)/3); mean truth 200.
  CHECK(cvrmse(truth, down20) == doctest::Approx(100.0 * std::sqrt(5600.0 / 3.0) / 200.0));
  std::vector<double> zeros{0, 0, 0};
  CHECK_THROWS_AS(nmbe(zeros, truth), Error);
  CHECK_THROWS_AS(cvrmse(zeros, truth), Error);
  CHECK_THROWS_AS(nmbe(std::vector<double>{}, std::vector<double>{}), Error);
  CHECK_THROWS_AS(nmbe(truth, std::vector<double>{1, 2}), Error);
}

TEST_CASE("nmbe and cvrmse properties") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(1.0, 1e5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> t(20), p(20);
    for (std::size_t i = 0; i < 20; ++i) {
      t[i] = u(rng);
      p[i] = u(rng);
    }
    double k = 0.1 + static_cast<double>(trial);
    std::vector<double> tk(t), pk(p);
    for (auto& v : tk) v *= k;
    for (auto& v : pk) v *= k;
    CHECK(nmbe(tk, pk) == doctest::Approx(nmbe(t, p)).epsilon(1e-9));
    CHECK(cvrmse(tk, pk) == doctest::Approx(cvrmse(t, p)).epsilon(1e-9));
    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> tp(20), pp(20);
    for (std::size_t i = 0; i < 20; ++i) {
      tp[i] = t[perm[i]];
      pp[i] = p[perm[i]];
    }
    CHECK(nmbe(tp, pp) == doctest::Approx(nmbe(t, p)).epsilon(1e-9));
    CHECK(cvrmse(tp, pp) == doctest::Approx(cvrmse(t, p)).epsilon(1e-9));
    CHECK(cvrmse(t, p) >= std::abs(nmbe(t, p)) - 1e-9);
  }
}

TEST_CASE("ashrae verdict is inclusive") {
  CHECK(ashrae_verdict(10.0, 30.0) == Verdict::calibrated);
  CHECK(ashrae_verdict(-10.0, 0.0) == Verdict::calibrated);
  CHECK(ashrae_verdict(10.01, 5.0) == Verdict::uncalibrated);
  CHECK(ashrae_verdict(0.0, 30.01) == Verdict::uncalibrated);
  CHECK(ashrae_verdict(-12.0, 31.0) == Verdict::uncalibrated);
  CHECK(std::string(to_string(Verdict::calibrated)) == "calibrated");
}

TEST_CASE("segmentation metrics: two-class hand case") {
  Confusion conf{{8, 2}, {1, 9}};
  auto m = metrics_from_confusion(conf);
  CHECK(m.per_class[0].iou == doctest::Approx(8.0 / 11.0));
  CHECK(m.per_class[1].iou == doctest::Approx(0.75));
  CHECK(m.per_class[0].precision == doctest::Approx(8.0 / 9.0));
  CHECK(m.per_class[0].recall == doctest::Approx(0.8));
  CHECK(m.per_class[1].dice == doctest::Approx(18.0 / 21.0));
  CHECK(m.accuracy == doctest::Approx(17.0 / 20.0));
  CHECK(m.miou == doctest::Approx((8.0 / 11.0 + 0.75) / 2.0));
  auto fg = metrics_from_confusion(conf, true);
  CHECK(fg.miou == doctest::Approx(0.75));
}

TEST_CASE("segmentation metrics: perfect and absent classes") {
  auto a = class_map({0, 1, 1, 2}, 4);
  auto m = confusion_and_seg_metrics(a, a);
  CHECK(m.miou == 1.0);
  CHECK(m.per_class[3].iou == 1.0);
  CHECK_FALSE(m.per_class[3].present);
  auto b = class_map({0, 1, 1, 3}, 4);
  auto mb = confusion_and_seg_metrics(b, a);
  CHECK(mb.per_class[2].iou == 0.0);
  CHECK(mb.per_class[3].iou == 0.0);
  CHECK_THROWS_AS(confusion_and_seg_metrics(class_map({0, 1}, 4), a), Error);
}

TEST_CASE("segmentation metrics agree with a brute-force oracle") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5;
    std::vector<std::uint8_t> pred(200), truth(200);
    for (std::size_t i = 0; i < 200; ++i) {
      truth[i] = static_cast<std::uint8_t>(rng() % n);
      pred[i] = rng() % 3 == 0 ? static_cast<std::uint8_t>(rng() % n) : truth[i];
    }
    auto m = confusion_and_seg_metrics(class_map(pred, n), class_map(truth, n));
    double miou = 0;
    for (int c = 0; c < n; ++c) {
      auto k = count_class(pred, truth, c);
      double iou = k.tp + k.fp + k.fn == 0 ? 1.0 : k.tp / (k.tp + k.fp + k.fn);
      CHECK(m.per_class[static_cast<std::size_t>(c)].iou == doctest::Approx(iou));
      double dice = k.tp + k.fp + k.fn == 0 ? 1.0 : 2 * k.tp / (2 * k.tp + k.fp + k.fn);
      CHECK(m.per_class[static_cast<std::size_t>(c)].dice == doctest::Approx(dice));
      miou += iou;
    }
    CHECK(m.miou == doctest::Approx(miou / n));
    // Permuting pixels changes nothing.
    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint8_t> pp(200), tp(200);
    for (std::size_t i = 0; i < 200; ++i) {
      pp[i] = pred[perm[i]];
      tp[i] = truth[perm[i]];
    }
    auto mp = confusion_and_seg_metrics(class_map(pp, n), class_map(tp, n));
    CHECK(mp.confusion == m.confusion);
  }
}

TEST_CASE("confusion rows normalise") {
  Confusion conf{{8, 2, 0}, {1, 9, 0}, {0, 0, 0}};
  auto r = normalize_rows(conf);
  CHECK(r[0][0] == doctest::Approx(0.8));
  CHECK(r[1][1] == doctest::Approx(0.9));
  CHECK(r[2][0] == 0.0);
  auto png = tiles::decode_png(confusion_png(conf, 4));
  CHECK(png.height() == 12);
  CHECK(png.width() == 12);
}

TEST_CASE("reconstruct energy from classes") {
  auto pred = class_map({0, 1, 2, 3}, 4);
  std::vector<double> rep{0.0, std::log1p(10.0), std::log1p(100.0), std::log1p(1000.0)};
  auto e = reconstruct_energy(pred, rep);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == doctest::Approx(10.0));
  CHECK(e[2] == doctest::Approx(100.0));
  CHECK(e[3] == doctest::Approx(1000.0));
  CHECK_THROWS_AS(reconstruct_energy(pred, std::span<const double>(rep.data(), 2)), Error);
}

TEST_CASE("evaluate_energy: exact prediction is calibrated") {
  EnergyBins bins{{std::log1p(50.0), std::log1p(500.0)},
                  {0.0, std::log1p(10.0), std::log1p(100.0), std::log1p(1000.0)}};
  std::vector<EnergyPair> pairs;
  for (int t = 0; t < 3; ++t) {
    EnergyPair p;
    p.tile_id = "t" + std::to_string(t);
    p.truth_log = Grid<float>(1, 5, 1, 0.0f);
    p.truth_log[0] = static_cast<float>(std::log1p(10.0));
    p.truth_log[1] = static_cast<float>(std::log1p(100.0));
    p.truth_log[2] = static_cast<float>(std::log1p(1000.0));
    p.truth_log[3] = tiles::kEnergyNull;
    p.pred = class_map({1, 2, 3, 3, 0}, 4);
    pairs.push_back(p);
  }
  auto rep = evaluate_energy(pairs, bins);
  CHECK(rep.n_tiles == 3);
  CHECK(std::abs(rep.nmbe) < 1e-4);
  CHECK(std::abs(rep.cvrmse) < 1e-4);
  CHECK(rep.verdict == Verdict::calibrated);
  CHECK(rep.truth_totals[0] == doctest::Approx(1110.0).epsilon(1e-5));
  auto j = to_json(rep);
  CHECK(j["verdict"] == "calibrated");
  CHECK_FALSE(summary_table(rep).empty());

  // Doubling every class one step up over-predicts and fails calibration.
  for (auto& p : pairs) p.pred = class_map({2, 3, 3, 3, 0}, 4);
  auto worse = evaluate_energy(pairs, bins);
  CHECK(worse.nmbe > 10.0);
  CHECK(worse.verdict == Verdict::uncalibrated);
}
