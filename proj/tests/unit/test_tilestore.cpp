#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <random>
#include <set>
#include <thread>

#include "sense/tilestore/muse.hpp"
#include "sense/tilestore/prompt.hpp"
#include "sense/tilestore/qc.hpp"
#include "sense/tilestore/raster_io.hpp"
#include "sense/tilestore/rasterize.hpp"
#include "sense/tilestore/store.hpp"
#include "sense/tilestore/transform.hpp"

using namespace sense;
using namespace sense::tiles;
namespace fs = std::filesystem;

namespace {

const GeoBox kBox{-74.0, 40.7, -73.976, 40.718};

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sense_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tile small_tile(const std::string& id, std::size_t n = 8) {
  Tile t;
  t.tile_id = id;
  t.city = "New York City";
  t.bbox = kBox;
  t.image = Grid<float>(n, n, 3, 0.25f);
  t.constraints = Grid<std::uint8_t>(n, n, 3, 0);
  t.constraints.at(1, 2, 2) = 1;
  t.height = Grid<float>(n, n, 1, 0.0f);
  t.energy = Grid<float>(n, n, 1, 0.0f);
  t.height.at(3, 3) = 12.5f;
  t.energy.at(3, 3) = 9.25f;
  t.energy.at(n - 1, n - 1) = kEnergyNull;
  t.density = {24.59, 3.2, 11.29};
  return t;
}

}  // namespace

TEST_CASE("rasterize: empty geometry list gives an all-zero mask") {
  auto r = rasterize_constraints({}, kBox, {64, 64});
  CHECK(r.errors.empty());
  CHECK(std::all_of(r.mask.values().begin(), r.mask.values().end(), [](auto v) { return v == 0; }));
  CHECK(r.mask.channels() == kConstraintChannels);
}

TEST_CASE("rasterize: full-width road at mid-height sets exactly one row") {
  const Resolution res{64, 64};
  PixelTransform tf(kBox, res);
  const double y_line = 32.5;  // centre of row 32
  Geometry road{ConstraintChannel::major_road, GeometryKind::line,
                {{tf.to_lon(0.0), tf.to_lat(y_line)}, {tf.to_lon(64.0), tf.to_lat(y_line)}}, 1.0};
  auto r = rasterize_constraints({road}, kBox, res);
  // Brute-force oracle: a pixel centre belongs to the 1-px band iff it lies
  // in [y - 0.5, y + 0.5) and within the road's x extent.
  std::size_t set_rows = 0;
  for (std::size_t y = 0; y < 64; ++y) {
    bool full = true, any = false;
    for (std::size_t x = 0; x < 64; ++x) {
      double cy = y + 0.5;
      bool expected = cy >= y_line - 0.5 && cy < y_line + 0.5;
      CHECK(r.mask.at(y, x, 2) == (expected ? 1 : 0));
      CHECK(r.mask.at(y, x, 0) == 0);
      CHECK(r.mask.at(y, x, 1) == 0);
      full = full && r.mask.at(y, x, 2);
      any = any || r.mask.at(y, x, 2);
    }
    if (any) {
      CHECK(full);
      ++set_rows;
    }
  }
  CHECK(set_rows == 1);
}

TEST_CASE("rasterize: axis-aligned masks round-trip through their vector outline") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Grid<std::uint8_t> mask(32, 40, 3, 0);
    for (int k = 0; k < 6; ++k) {
      std::size_t ch = rng() % 3, r0 = rng() % 32, c0 = rng() % 40;
      std::size_t r1 = std::min<std::size_t>(32, r0 + 1 + rng() % 8), c1 = std::min<std::size_t>(40, c0 + 1 + rng() % 10);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) mask.at(r, c, ch) = 1;
    }
    auto back = rasterize_constraints(vectorize_mask(mask, kBox), kBox, {32, 40});
    CHECK(back.errors.empty());
    CHECK(back.mask == mask);
  }
}

TEST_CASE("rasterize: geometries are clipped and invalid ones reported") {
  const Resolution res{16, 16};
  PixelTransform tf(kBox, res);
  Geometry partial{ConstraintChannel::water, GeometryKind::polygon,
                   {{tf.to_lon(-10), tf.to_lat(-10)}, {tf.to_lon(4), tf.to_lat(-10)}, {tf.to_lon(4), tf.to_lat(4)},
                    {tf.to_lon(-10), tf.to_lat(4)}}, 1.0};
  Geometry outside{ConstraintChannel::railway, GeometryKind::line,
                   {{tf.to_lon(100), tf.to_lat(100)}, {tf.to_lon(120), tf.to_lat(100)}}, 2.0};
  Geometry bad_line{ConstraintChannel::major_road, GeometryKind::line, {{tf.to_lon(1), tf.to_lat(1)}}, 1.0};
  Geometry bad_poly{ConstraintChannel::water, GeometryKind::polygon, {{0, 0}, {1, 1}}, 1.0};
  Geometry nan_pt{ConstraintChannel::water, GeometryKind::line, {{NAN, 0}, {1, 1}}, 1.0};
  auto r = rasterize_constraints({partial, outside, bad_line, bad_poly, nan_pt}, kBox, res);
  REQUIRE(r.errors.size() == 3);
  CHECK(r.errors[0].index == 2);
  CHECK(r.errors[1].index == 3);
  CHECK(r.errors[2].index == 4);
  std::size_t water = 0, rail = 0;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      water += r.mask.at(y, x, 0);
      rail += r.mask.at(y, x, 1);
    }
  CHECK(water == 16);
  CHECK(rail == 0);
  CHECK_THROWS_AS(rasterize_constraints({}, GeoBox{1, 1, 1, 2}, res), Error);
}

TEST_CASE("log1p: identities and errors") {
  Grid<double> raw(1, 5, 1);
  raw[0] = 0.0;
  raw[1] = M_E - 1.0;
  raw[2] = 1.0;
  raw[3] = 1e3;
  raw[4] = 1e9;
  auto lg = log1p_transform(raw);
  CHECK(lg[0] == 0.0);
  CHECK(lg[1] == doctest::Approx(1.0).epsilon(1e-15));
  auto back = expm1_transform(lg);
  for (std::size_t i = 2; i < 5; ++i) CHECK(std::abs(back[i] - raw[i]) / raw[i] < 1e-9);

  Grid<double> bad(2, 2, 1, 1.0);
  bad[0] = -3.0;
  bad[3] = INFINITY;
  try {
    log1p_transform(bad);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("2 pixel") != std::string::npos);
  }
}

TEST_CASE("log1p: monotone") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1e7);
  Grid<double> raw(1, 1000, 1);
  for (auto& v : raw.values()) v = u(rng);
  auto lg = log1p_transform(raw);
  for (std::size_t i = 0; i < 1000; ++i)
    for (std::size_t j = i + 1; j < std::min<std::size_t>(1000, i + 5); ++j)
      CHECK((raw[i] <= raw[j]) == (lg[i] <= lg[j]));
}

TEST_CASE("discretize: hand cases") {
  SUBCASE("all-zero grid is background with degenerate edges") {
    Grid<float> g(4, 4, 1, 0.0f);
    auto m = discretize(g, DiscretizationScheme::height_quintile_4);
    CHECK(m.degenerate);
    CHECK(m.bin_edges.empty());
    CHECK(m.n_classes == 5);
    CHECK(std::all_of(m.labels.values().begin(), m.labels.values().end(), [](auto v) { return v == 0; }));
  }
  SUBCASE("heights 10,20,30,40") {
    Grid<float> g(1, 6, 1, 0.0f);
    g[1] = 10;
    g[2] = 20;
    g[3] = 30;
    g[4] = 40;
    auto m = discretize(g, DiscretizationScheme::height_quintile_4);
    REQUIRE(m.bin_edges.size() == 3);
    CHECK(m.bin_edges[0] == doctest::Approx(17.5));
    CHECK(m.bin_edges[1] == doctest::Approx(25.0));
    CHECK(m.bin_edges[2] == doctest::Approx(32.5));
    CHECK(m.labels[0] == 0);
    CHECK(m.labels[1] == 1);
    CHECK(m.labels[2] == 2);
    CHECK(m.labels[3] == 3);
    CHECK(m.labels[4] == 4);
    CHECK(m.labels[5] == 0);
    CHECK(m.source == ClassSource::height);
  }
  SUBCASE("energy 1..6") {
    Grid<float> g(1, 6, 1);
    for (int i = 0; i < 6; ++i) g[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
    auto m = discretize(g, DiscretizationScheme::energy_tertile);
    REQUIRE(m.bin_edges.size() == 2);
    CHECK(m.bin_edges[0] == doctest::Approx(2.65));
    CHECK(m.bin_edges[1] == doctest::Approx(4.30));
    std::vector<int> got(m.labels.values().begin(), m.labels.values().end());
    CHECK(got == std::vector<int>{1, 1, 2, 2, 3, 3});
    CHECK(m.n_classes == 4);
  }
  SUBCASE("errors") {
    Grid<float> few(1, 4, 1, 0.0f);
    few[0] = 1;
    few[1] = 2;
    CHECK_THROWS_AS(discretize(few, DiscretizationScheme::height_quintile_4), Error);
    Grid<float> nan(1, 4, 1, 1.0f);
    nan[0] = 1;
    nan[1] = 2;
    nan[2] = 3;
    nan[3] = NAN;
    CHECK_THROWS_AS(discretize(nan, DiscretizationScheme::energy_tertile), Error);
  }
  SUBCASE("null sentinel is background and excluded from the fit") {
    Grid<float> g(1, 7, 1);
    for (int i = 0; i < 6; ++i) g[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
    g[6] = kEnergyNull;
    auto m = discretize(g, DiscretizationScheme::energy_tertile);
    CHECK(m.bin_edges[0] == doctest::Approx(2.65));
    CHECK(m.labels[6] == 0);
  }
}

TEST_CASE("discretize: frozen edges reapply to new grids") {
  Grid<float> train(1, 4, 1);
  train[0] = 10;
  train[1] = 20;
  train[2] = 30;
  train[3] = 40;
  auto bins = fit_bin_edges(train.values(), DiscretizationScheme::height_quintile_4);
  Grid<float> other(1, 3, 1);
  other[0] = 100;
  other[1] = 1;
  other[2] = 0;
  auto m = apply_bins(other, bins);
  CHECK(m.labels[0] == 4);
  CHECK(m.labels[1] == 1);
  CHECK(m.labels[2] == 0);
  CHECK(m.bin_edges == bins.edges);
}

TEST_CASE("bin medians per class") {
  Grid<float> g(1, 6, 1);
  for (int i = 0; i < 6; ++i) g[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
  auto bins = fit_bin_edges(g.values(), DiscretizationScheme::energy_tertile);
  auto med = bin_medians(g.values(), bins);
  CHECK(med == std::vector<double>{0.0, 1.5, 3.5, 5.5});
}

TEST_CASE("qc: null-block heuristic") {
  SUBCASE("fully annotated map is accepted") {
    Grid<float> e(8, 8, 1, 5.0f);
    auto d = qc_energy_layer(e, 0.25);
    CHECK(d.status == QcStatus::accepted);
    CHECK(d.largest_null_block == 0);
  }
  SUBCASE("contiguous block covering half the annotated area is rejected") {
    Grid<float> e(8, 8, 1, 5.0f);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 8; ++x) e.at(y, x) = kEnergyNull;
    auto d = qc_energy_layer(e, 0.25);
    CHECK(d.status == QcStatus::rejected);
    CHECK(d.largest_null_block == 32);
    CHECK(d.largest_null_fraction == doctest::Approx(0.5));
  }
  SUBCASE("scattered nulls are 4-connected components, not one block") {
    Grid<float> e(8, 8, 1, 5.0f);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        if ((x + y) % 2 == 0) e.at(y, x) = kEnergyNull;
    auto d = qc_energy_layer(e, 0.25);
    CHECK(d.largest_null_block == 1);
    CHECK(d.status == QcStatus::accepted);
  }
  SUBCASE("no annotation at all is rejected") {
    Grid<float> e(4, 4, 1, 0.0f);
    CHECK(qc_energy_layer(e, 0.25).status == QcStatus::rejected);
  }
}

TEST_CASE("qc: expert overrides take precedence") {
  Tile t = small_tile("t1");
  for (auto& v : t.energy.values()) v = kEnergyNull;
  auto overrides = QcOverrides::parse("# expert flags\nt1 accepted\nt2 rejected  # bad alignment\n\n");
  CHECK(overrides.size() == 2);
  auto plain = qc_filter(t, 0.25);
  CHECK(plain.status == QcStatus::rejected);
  auto d = qc_filter(t, 0.25, &overrides);
  CHECK(d.status == QcStatus::accepted);
  CHECK(d.overridden);
  CHECK_THROWS_AS(QcOverrides::parse("t3\n"), Error);
  CHECK_THROWS_AS(QcOverrides::parse("t3 maybe\n"), Error);
  CHECK_THROWS_AS(QcOverrides::parse("t3 unreviewed\n"), Error);
}

TEST_CASE("prompt: template rendering and parsing") {
  CHECK(render_prompt("New York City", {24.59, 3.20, 11.29}) ==
        "Satellite imagery of New York City. The Building Coverage Ratio in this area is 24.59 %. The Building "
        "Volume Density is 3.20 cubic meters per square meter. The Road Density is 11.29 kilometers per square "
        "kilometer.");
  auto zero = render_prompt("X", {0, 0, 0});
  CHECK(zero ==
        "Satellite imagery of X. The Building Coverage Ratio in this area is 0.00 %. The Building Volume Density "
        "is 0.00 cubic meters per square meter. The Road Density is 0.00 kilometers per square kilometer.");
  auto parsed = parse_prompt(zero);
  REQUIRE(parsed);
  CHECK(parsed->city == "X");
  CHECK(parsed->density == DensityMetrics{0, 0, 0});
  CHECK_FALSE(parse_prompt("Satellite imagery of nowhere"));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pct(0.0, 100.0), pos(0.0, 40.0);
  for (int i = 0; i < 100; ++i) {
    DensityMetrics d{pct(rng), pos(rng), pos(rng)};
    auto p = parse_prompt(render_prompt("Lyon", d));
    REQUIRE(p);
    CHECK(p->city == "Lyon");
    CHECK(std::abs(p->density.bcr - d.bcr) <= 0.005 + 1e-12);
    CHECK(std::abs(p->density.bvd - d.bvd) <= 0.005 + 1e-12);
    CHECK(std::abs(p->density.rd - d.rd) <= 0.005 + 1e-12);
  }
}

TEST_CASE("density metrics validation names the violated bound") {
  try {
    DensityMetrics{150.0, 1.0, 1.0}.validate();
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bcr") != std::string::npos);
  }
  CHECK_THROWS_AS((DensityMetrics{10.0, NAN, 1.0}.validate()), Error);
  CHECK_THROWS_AS((DensityMetrics{10.0, 1.0, -1.0}.validate()), Error);
}

TEST_CASE("raster codecs round-trip random grids") {
  std::mt19937 rng(5);
  for (std::size_t channels : {1u, 3u, 4u}) {
    Grid<std::uint8_t> g(9, 13, channels);
    for (auto& v : g.values()) v = static_cast<std::uint8_t>(rng());
    CHECK(decode_png(encode_png(g)) == g);
  }
  Grid<float> f(7, 5, 2);
  std::normal_distribution<float> n;
  for (auto& v : f.values()) v = n(rng);
  auto bytes = encode_float_raster(f, LayerKind::energy);
  CHECK(std::equal(kFloatRasterMagic, kFloatRasterMagic + 8, bytes.begin()));
  auto back = decode_float_raster(bytes);
  CHECK(back.grid == f);
  CHECK(back.kind == LayerKind::energy);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_float_raster(bytes), Error);
  CHECK_THROWS_AS(decode_png(tiles::Bytes{1, 2, 3}), Error);
}

TEST_CASE("tile store: save, load, manifest") {
  auto root = scratch_dir("store");
  TileStore store(root);
  Tile t = small_tile("tile_0001");
  t.qc = QcStatus::accepted;
  t.split = Split::train;
  store.save(t);
  CHECK(store.contains("New York City", "tile_0001"));
  CHECK(fs::exists(root / "New_York_City" / "tile_0001" / "image.png"));
  Tile back = store.load("New York City", "tile_0001");
  CHECK(back.height == t.height);
  CHECK(back.energy == t.energy);
  CHECK(back.constraints == t.constraints);
  CHECK(back.density == t.density);
  CHECK(back.qc == QcStatus::accepted);
  CHECK(back.split == Split::train);
  CHECK(std::abs(back.image[0] - t.image[0]) < 1.0f / 255.0f);

  std::vector<ManifestEntry> entries{{"tile_0001", "New York City", Split::train, QcStatus::accepted}};
  store.write_manifest(entries);
  CHECK(store.manifest() == entries);
  CHECK(store.find("tile_0001"));
  CHECK_FALSE(store.find("nope"));
  CHECK_THROWS_AS(store.load("Boston", "tile_0001"), Error);

  // A second writer holding the lock makes save fail.
  std::ofstream(store.tile_dir(t.city, t.tile_id) / ".write.lock") << "held";
  CHECK_THROWS_AS(store.save(t), Error);
  fs::remove_all(root);
}

TEST_CASE("MUSE loader reproduces published per-city counts") {
  auto root = scratch_dir("muse");
  Tile proto = small_tile("proto", 4);
  for (const auto& city : published_city_counts()) {
    fs::path dir = root / city_slug(city.city);
    fs::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    manifest << "tile_id,city,qc\n";
    for (std::size_t i = 0; i < city.total; ++i) {
      std::string id = city_slug(city.city) + "_" + std::to_string(i);
      bool accepted = i < city.accepted;
      manifest << id << ',' << city.city << ',' << (accepted ? "accepted" : "rejected") << '\n';
      if (accepted && i < 3) {
        Tile t = proto;
        t.tile_id = id;
        t.city = city.city;
        TileStore(root).save(t);
      } else if (accepted) {
        fs::create_directories(dir / id);
        for (const char* layer : {"image.png", "constraints.png", "height.f32r", "energy.f32r", "meta.json"})
          std::ofstream(dir / id / layer) << "";
      }
    }
  }
  auto index = load_muse(root);
  CHECK(index.entries.size() == 1589 + 2051 + 1412 + 1438);
  CHECK(check_published_counts(index).empty());
  CHECK(index.missing_layers.empty());
  CHECK(index.counts.at("Busan").accepted == 996);
  // Lazily loadable via the tile store on the same root.
  Tile loaded = TileStore(root).load("Lyon", "Lyon_0");
  CHECK(loaded.city == "Lyon");

  fs::remove(root / "Boston" / "Boston_0" / "energy.f32r");
  index = load_muse(root);
  CHECK(index.missing_layers.size() == 1);
  index.counts["Boston"].accepted = 525;
  auto problems = check_published_counts(index);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("Boston") != std::string::npos);
  fs::remove_all(root);
}
