#include <cmath>
#include <string>
#include <vector>

#include "distillbound/bounds.hpp"
#include "distillbound/compgraph.hpp"
#include "distillbound/error.hpp"
#include "distillbound/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace distillbound;

namespace {

// depth-L hyperparameters with every per-layer value set to 1
GraphHyperParams ones_hp(std::size_t depth, std::size_t width) {
  GraphHyperParams hp;
  hp.rho.assign(depth, 1.0);
  hp.b.assign(depth, 1.0);
  hp.r.assign(depth, 1.0);
  hp.s.assign(depth, 1.0);
  hp.r_raw = hp.r;
  hp.s_raw = hp.s;
  hp.b_active = hp.b;
  hp.width_max = width;
  hp.depth = depth;
  return hp;
}

GraphHyperParams random_hp(std::uint64_t seed, std::size_t depth = 3) {
  auto eng = make_engine(seed);
  GraphHyperParams hp = ones_hp(depth, 4 + eng() % 60);
  for (std::size_t i = 0; i < depth; ++i) {
    hp.r[i] = 1.0 + 4.0 * canonical_unit(eng);
    hp.b[i] = 1.0 + 4.0 * canonical_unit(eng);
    hp.s[i] = 1.0 + 4.0 * canonical_unit(eng);
    hp.rho[i] = 1.0 + canonical_unit(eng);
  }
  return hp;
}

// straight transcription of the complexity formula, kept separate on purpose
double rad_reference(const GraphHyperParams& hp, std::size_t n) {
  const double m = static_cast<double>(hp.width_max);
  double sum = 0.0;
  for (std::size_t i = 0; i < hp.depth; ++i) {
    double tail = 1.0;
    for (std::size_t l = i + 1; l < hp.depth; ++l) tail *= hp.s[l] * hp.rho[l];
    sum += std::pow(hp.r[i] * hp.b[i] * hp.rho[i] * tail, 2.0 / 3.0);
  }
  const double nn = static_cast<double>(n);
  return 4.0 / nn + 12.0 * std::sqrt(std::log(2.0 * m * m) / nn) * std::pow(sum, 1.5);
}

}  // namespace

TEST_CASE("graph complexity reproduces the frozen single-layer value") {
  const double got = rad_compgraph(ones_hp(1, 2), 100);
  CHECK(oracles::rel_err(got, 1.7704322639210596205) < 1e-10);
}

TEST_CASE("graph complexity matches an independent transcription on random inputs") {
  for (int t = 0; t < 200; ++t) {
    const GraphHyperParams hp = random_hp(derive_seed(3, "hp", t), 1 + t % 4);
    for (std::size_t n : {10, 1000}) {
      CHECK(oracles::rel_err(rad_compgraph(hp, n), rad_reference(hp, n)) < 1e-12);
    }
  }
}

TEST_CASE("graph complexity scaling: r doubles the sqrt term, 4x samples halve it") {
  const GraphHyperParams hp = random_hp(5);
  const std::size_t n = 400;
  const double base = rad_compgraph(hp, n) - 4.0 / n;

  GraphHyperParams doubled = hp;
  for (double& r : doubled.r) r *= 2.0;
  CHECK(rad_compgraph(doubled, n) - 4.0 / n == doctest::Approx(2.0 * base).epsilon(1e-12));

  const double quarter = rad_compgraph(hp, 4 * n) - 4.0 / (4 * n);
  CHECK(quarter == doctest::Approx(base / 2.0).epsilon(1e-12));
}

TEST_CASE("graph complexity is monotone in every hyperparameter") {
  for (int t = 0; t < 1000; ++t) {
    auto eng = make_engine(derive_seed(7, "mono", t));
    const GraphHyperParams hp = random_hp(eng(), 1 + eng() % 4);
    const std::size_t n = 50 + eng() % 1000;
    const double base = rad_compgraph(hp, n);

    GraphHyperParams up = hp;
    const double bump = 1.0 + canonical_unit(eng);
    const std::size_t layer = eng() % hp.depth;
    switch (eng() % 4) {
      case 0: up.r[layer] += bump; break;
      case 1: up.b[layer] += bump; break;
      case 2: up.s[layer] += bump; break;
      default: up.rho[layer] += bump; break;
    }
    CHECK(rad_compgraph(up, n) >= base);
    // wider never helps
    up = hp;
    up.width_max += 1 + eng() % 64;
    CHECK(rad_compgraph(up, n) >= base);
    // more samples never hurt
    CHECK(rad_compgraph(hp, 2 * n) <= base);
  }
}

TEST_CASE("covering cardinality reproduces the frozen value and its scalings") {
  CHECK(oracles::rel_err(covering_log_cardinality(ones_hp(1, 2), 1, 1.0),
                         5.2398643407765450764) < 1e-10);

  const GraphHyperParams hp = random_hp(11);
  const double at_eps = covering_log_cardinality(hp, 100, 0.3);
  const double at_2eps = covering_log_cardinality(hp, 100, 0.6);
  CHECK(at_2eps == doctest::Approx(at_eps / 4.0).epsilon(1e-12));
  // linear in n
  CHECK(covering_log_cardinality(hp, 200, 0.3) == doctest::Approx(2.0 * at_eps).epsilon(1e-12));
}

TEST_CASE("entropy-integral step has the 4/n floor and grows with tau") {
  const std::size_t n = 250;
  CHECK(dudley_rad_from_cover(0.0, n) == doctest::Approx(4.0 / n).epsilon(1e-15));
  CHECK(dudley_rad_from_cover(1.0 / 3.0, n) == doctest::Approx(4.0 / n).epsilon(1e-15));
  CHECK(dudley_rad_from_cover(2.0, n) == doctest::Approx(24.0 / n).epsilon(1e-15));
  double prev = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double v = dudley_rad_from_cover(0.2 * i, n);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(dudley_rad_from_cover(-0.1, n), ConfigError);
}

TEST_CASE("abstract bound: confidence-only fixture hits the frozen value") {
  BoundInputs bi;
  bi.n = 10000;
  bi.m = 10000;
  bi.k = 2;
  bi.gamma = 1.0;
  bi.delta = 0.01;
  bi.ratio_bound = 4.0;
  bi.hp = ones_hp(1, 2);
  const BoundReport r = abstract_bound(bi, 0.0, 0.0);
  CHECK(oracles::rel_err(r.total, 0.45522813881554390526) < 1e-10);
  CHECK(r.term("distillation") == 0.0);
  CHECK(r.term("softmax_error") == 0.0);
  CHECK(r.term("rad_f") == 0.0);
  CHECK(r.term("confidence") == doctest::Approx(r.total).epsilon(1e-15));
}

TEST_CASE("instantiated bound reproduces the frozen toy fixture term by term") {
  BoundInputs bi;
  bi.n = 100;
  bi.m = 100;
  bi.k = 2;
  bi.gamma = 1.0;
  bi.delta = 0.1;
  bi.ratio_bound = 4.0;
  bi.hp = ones_hp(1, 2);
  bi.rad_f = 0.5;
  bi.phi = 0.1;
  bi.softmax_err = 0.05;
  bi.c_tilde = 1.0;

  const BoundReport r = full_bound_compgraph(bi);
  REQUIRE(r.terms.size() == 6);
  const std::vector<double> expected{0.8,
                                     0.1,
                                     5.6568542494923801952,
                                     20.030154551200522597,
                                     2.5037693189000653246,
                                     3.2189490394340208595};
  const std::vector<std::string> names{"distillation", "softmax_error", "rad_f",
                                       "rad_g_m",      "rad_g_n",       "confidence"};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(r.terms[i].name == names[i]);
    CHECK(oracles::rel_err(r.terms[i].value, expected[i]) < 1e-10);
  }
  CHECK(oracles::rel_err(r.total, 32.309727159026988976) < 1e-10);

  // the total is the exact running sum of the reported terms
  double acc = 0.0;
  for (const BoundTerm& t : r.terms) acc += t.value;
  CHECK(r.total == acc);

  // and matches abstract_bound fed with the graph complexities
  const BoundReport ab =
      abstract_bound(bi, rad_compgraph(bi.hp, bi.m), rad_compgraph(bi.hp, bi.n));
  CHECK(ab.total == r.total);
}

TEST_CASE("bound total is monotone in the measured inputs") {
  for (int t = 0; t < 1000; ++t) {
    auto eng = make_engine(derive_seed(13, "mono", t));
    BoundInputs bi;
    bi.n = 100 + eng() % 5000;
    bi.m = 100 + eng() % 5000;
    bi.k = 2 + eng() % 8;
    bi.gamma = 0.25 + canonical_unit(eng);
    bi.delta = 0.01 + 0.2 * canonical_unit(eng);
    bi.ratio_bound = 4.0 + canonical_unit(eng);
    bi.hp = random_hp(eng(), 1 + eng() % 3);
    bi.rad_f = canonical_unit(eng);
    bi.phi = canonical_unit(eng);
    bi.softmax_err = canonical_unit(eng);
    const double base = full_bound_compgraph(bi).total;

    BoundInputs up = bi;
    switch (eng() % 4) {
      case 0: up.phi += 0.3; break;
      case 1: up.softmax_err += 0.3; break;
      case 2: up.rad_f += 0.3; break;
      default: up.ratio_bound += 1.0; break;
    }
    CHECK(full_bound_compgraph(up).total >= base);

    // shrinking delta (more confidence) can only grow the bound
    up = bi;
    up.delta = bi.delta / 2.0;
    CHECK(full_bound_compgraph(up).total >= base);
  }
}

TEST_CASE("stable-rank complexity: frozen all-e fixture and n scaling") {
  const std::vector<double> s{std::exp(1.0), std::exp(1.0), std::exp(1.0)};
  const double got = stable_rank_rad(s, s, 16.0, 256, 64);
  CHECK(oracles::rel_err(got, 26.091877836196277105) < 1e-10);

  // quadrupling n multiplies by 4^{-3/4}
  const double at_4n = stable_rank_rad(s, s, 16.0, 1024, 64);
  CHECK(at_4n == doctest::Approx(got * std::pow(4.0, -0.75)).epsilon(1e-12));

  // layer order is irrelevant
  const std::vector<double> sp{2.0, 1.0, 3.0};
  const std::vector<double> fr{2.5, 4.0, 3.5};
  const std::vector<double> sp_perm{3.0, 2.0, 1.0};
  const std::vector<double> fr_perm{3.5, 2.5, 4.0};
  CHECK(stable_rank_rad(sp, fr, 10.0, 128, 32) ==
        doctest::Approx(stable_rank_rad(sp_perm, fr_perm, 10.0, 128, 32)).epsilon(1e-12));

  CHECK_THROWS_AS(stable_rank_rad({1.0}, {0.5}, 1.0, 10, 4), ConfigError);  // frob < spectral
  CHECK_THROWS_AS(stable_rank_rad({}, {}, 1.0, 10, 4), ConfigError);
}

TEST_CASE("frobenius product measure works on chains and refuses skip graphs") {
  DenseChain chain;
  chain.weights = {DenseMatrix::identity(3), scale(DenseMatrix::identity(3), 2.0)};
  chain.gates = {GateKind::relu, GateKind::identity};
  CHECK(generalization_measure_frob(chain) ==
        doctest::Approx(std::sqrt(3.0) * 2.0 * std::sqrt(3.0)).epsilon(1e-12));

  const CanonicalGraph g = graph_from_chain(chain, {1.0, 1.0});
  CHECK(generalization_measure_frob(g) == doctest::Approx(generalization_measure_frob(chain)));

  CanonicalGraph with_skip = g;
  with_skip.layers[0].F = DenseMatrix::identity(3);
  with_skip.layers[0].gate =
      GateSpec::blockwise_of({GateBlock{GateKind::relu, 3}, GateBlock{GateKind::identity, 3}});
  with_skip.layers[1].W = DenseMatrix(3, 6);
  CHECK_THROWS_AS(generalization_measure_frob(with_skip), ConfigError);
}

TEST_CASE("report serialization carries the inputs, terms and exact total") {
  BoundInputs bi;
  bi.n = 64;
  bi.m = 256;
  bi.k = 3;
  bi.gamma = 0.5;
  bi.hp = random_hp(17);
  bi.phi = 0.125;
  const BoundReport r = full_bound_compgraph(bi);

  const std::string json = report_to_json(r, bi);
  CHECK(json.find("\"formula\"") != std::string::npos);
  CHECK(json.find("risk_transfer_compgraph") != std::string::npos);
  CHECK(json.find("\"terms\"") != std::string::npos);
  CHECK(json.find("\"total\"") != std::string::npos);
  CHECK(json.find("\"gamma\"") != std::string::npos);

  const std::string header = report_csv_header();
  CHECK(header ==
        "# columns: formula,distillation,softmax_error,rad_f,rad_g_m,rad_g_n,confidence,total");
  const std::string row = report_csv_row(r);
  // the row ends in the exact total, printed with round-trip precision
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", r.total);
  CHECK(row.rfind(buf) == row.size() - std::string(buf).size());
  CHECK(row.find("risk_transfer_compgraph") == 0);

  CHECK_THROWS_AS(r.term("no_such_term"), ConfigError);
}

TEST_CASE("bound inputs are validated") {
  BoundInputs bi;
  bi.hp = ones_hp(1, 2);
  CHECK_NOTHROW(bi.validate());
  BoundInputs bad = bi;
  bad.n = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bi;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bi;
  bad.delta = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bi;
  bad.phi = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = bi;
  bad.hp.r.clear();
  CHECK_THROWS_AS(full_bound_compgraph(bad), ConfigError);
}
