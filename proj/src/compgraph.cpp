#include "distillbound/compgraph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "distillbound/error.hpp"

namespace distillbound {

using nlohmann::json;

GateSpec GateSpec::relu() { return GateSpec{GateKind::relu, 1.0, {}, GateKind::relu}; }
GateSpec GateSpec::identity() { return GateSpec{GateKind::identity, 1.0, {}, GateKind::relu}; }

GateSpec GateSpec::blockwise_of(std::vector<GateBlock> blocks, double rho) {
  return GateSpec{GateKind::blockwise, rho, std::move(blocks), GateKind::relu};
}

GateSpec GateSpec::residual(GateKind inner_kind) {
  constexpr double sqrt2 = 1.4142135623730951;
  return GateSpec{GateKind::residual, sqrt2, {}, inner_kind};
}

std::size_t GateSpec::output_rows(std::size_t in_rows) const {
  return kind == GateKind::residual ? in_rows / 2 : in_rows;
}

void GateSpec::validate(std::size_t in_rows, std::size_t layer_index) const {
  const std::string where = "layer " + std::to_string(layer_index) + ": ";
  auto require = [&](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(where + msg);
  };
  switch (kind) {
    case GateKind::relu:
    case GateKind::identity:
      require(rho >= 1.0, "gate rho must be >= 1 for elementwise gates");
      break;
    case GateKind::blockwise: {
      require(!blocks.empty(), "blockwise gate with no blocks");
      std::size_t total = 0;
      for (const auto& b : blocks) {
        require(b.kind == GateKind::relu || b.kind == GateKind::identity,
                "blockwise blocks must be relu or identity");
        total += b.rows;
      }
      require(total == in_rows, "blockwise gate rows do not sum to layer rows");
      require(rho >= 1.0, "gate rho must be >= 1 for blockwise gates");
      break;
    }
    case GateKind::residual:
      require(in_rows % 2 == 0, "residual gate needs an even row count to split");
      require(in_rows > 0, "residual gate on empty stack");
      require(inner == GateKind::relu || inner == GateKind::identity,
              "residual inner gate must be relu or identity");
      require(rho >= 1.4142135623730951 - 1e-12,
              "residual gate rho must be >= sqrt(2)");
      break;
  }
}

std::size_t CanonicalGraph::output_dim() const {
  return layers.empty() ? input_dim : layers.back().output_dim();
}

void CanonicalGraph::validate() const {
  if (input_dim == 0) throw std::invalid_argument("graph: input_dim must be positive");
  std::size_t dim = input_dim;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    if (l.W.rows() == 0 || l.W.cols() == 0)
      throw std::invalid_argument(where + "trainable matrix W is empty");
    if (l.W.cols() != dim)
      throw std::invalid_argument(where + "W has " + std::to_string(l.W.cols()) +
                                  " columns, input has dimension " + std::to_string(dim));
    if (!l.selector.empty() && l.selector.size() != dim)
      throw std::invalid_argument(where + "selector length does not match input dimension");
    if (!l.F.empty() && l.F.cols() != dim)
      throw std::invalid_argument(where + "F has " + std::to_string(l.F.cols()) +
                                  " columns, input has dimension " + std::to_string(dim));
    if (!(l.proj_radius > 0.0) || !std::isfinite(l.proj_radius))
      throw std::invalid_argument(where + "projection radius must be positive and finite");
    l.gate.validate(l.stack_rows(), i);
    dim = l.output_dim();
    if (dim == 0) throw std::invalid_argument(where + "layer output dimension is zero");
  }
}

namespace {

// A is n x d with rows as examples; zero the non-selected coordinates.
DenseMatrix apply_selector(const DenseMatrix& a, const std::vector<std::uint8_t>& sel) {
  if (sel.empty()) return a;
  DenseMatrix out = a;
  for (std::size_t j = 0; j < sel.size(); ++j)
    if (!sel[j])
      for (std::size_t i = 0; i < out.rows(); ++i) out(i, j) = 0.0;
  return out;
}

void apply_elementwise(DenseMatrix& a, GateKind kind, std::size_t col_begin, std::size_t col_end) {
  if (kind == GateKind::identity) return;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = col_begin; j < col_end; ++j)
      if (a(i, j) < 0.0) a(i, j) = 0.0;
}

DenseMatrix apply_gate(const GateSpec& gate, DenseMatrix pre) {
  switch (gate.kind) {
    case GateKind::relu:
      apply_elementwise(pre, GateKind::relu, 0, pre.cols());
      return pre;
    case GateKind::identity:
      return pre;
    case GateKind::blockwise: {
      std::size_t at = 0;
      for (const auto& b : gate.blocks) {
        apply_elementwise(pre, b.kind, at, at + b.rows);
        at += b.rows;
      }
      return pre;
    }
    case GateKind::residual: {
      const std::size_t h = pre.cols() / 2;
      DenseMatrix out(pre.rows(), h);
      for (std::size_t i = 0; i < pre.rows(); ++i)
        for (std::size_t j = 0; j < h; ++j) {
          double u = pre(i, j);
          if (gate.inner == GateKind::relu && u < 0.0) u = 0.0;
          out(i, j) = u + pre(i, h + j);
        }
      return out;
    }
  }
  throw std::logic_error("apply_gate: unknown gate kind");
}

}  // namespace

ForwardResult forward_graph(const CanonicalGraph& g, const DenseMatrix& X) {
  g.validate();
  if (X.cols() != g.input_dim)
    throw std::invalid_argument("forward_graph: input has " + std::to_string(X.cols()) +
                                " columns, graph expects " + std::to_string(g.input_dim));
  if (X.rows() == 0) throw std::invalid_argument("forward_graph: empty batch");

  ForwardResult res;
  res.activations.reserve(g.layers.size() + 1);
  res.activations.push_back(X);
  const double sqrt_n = std::sqrt(static_cast<double>(X.rows()));

  for (const auto& l : g.layers) {
    const DenseMatrix& in = res.activations.back();
    DenseMatrix selected = apply_selector(in, l.selector);
    const double radius = l.proj_radius * sqrt_n;
    const double norm = frobenius_norm(selected);
    const bool active = norm > radius;
    if (active) selected = scale(selected, radius / norm);
    res.b_active.push_back(frobenius_norm(selected) / sqrt_n);
    res.projection_active.push_back(active);

    DenseMatrix pre = matmul_nt(selected, l.W);  // n x out_w
    if (!l.F.empty()) {
      DenseMatrix fixed = matmul_nt(in, l.F);  // n x out_f
      DenseMatrix stacked(pre.rows(), pre.cols() + fixed.cols());
      for (std::size_t i = 0; i < pre.rows(); ++i) {
        for (std::size_t j = 0; j < pre.cols(); ++j) stacked(i, j) = pre(i, j);
        for (std::size_t j = 0; j < fixed.cols(); ++j) stacked(i, pre.cols() + j) = fixed(i, j);
      }
      pre = std::move(stacked);
    }
    res.activations.push_back(apply_gate(l.gate, std::move(pre)));
  }
  return res;
}

DenseMatrix forward_logits(const CanonicalGraph& g, const DenseMatrix& X) {
  return forward_graph(g, X).activations.back();
}

namespace {

// [W D ; F] as one block matrix; the spectral-norm carrier for s_i.
DenseMatrix stacked_block(const GraphLayer& l) {
  DenseMatrix wd = l.W;
  if (!l.selector.empty())
    for (std::size_t j = 0; j < l.selector.size(); ++j)
      if (!l.selector[j])
        for (std::size_t i = 0; i < wd.rows(); ++i) wd(i, j) = 0.0;
  if (l.F.empty()) return wd;
  DenseMatrix out(wd.rows() + l.F.rows(), wd.cols());
  for (std::size_t i = 0; i < wd.rows(); ++i)
    for (std::size_t j = 0; j < wd.cols(); ++j) out(i, j) = wd(i, j);
  for (std::size_t i = 0; i < l.F.rows(); ++i)
    for (std::size_t j = 0; j < l.F.cols(); ++j) out(wd.rows() + i, j) = l.F(i, j);
  return out;
}

}  // namespace

GraphHyperParams measure_hyperparams(const CanonicalGraph& g, const DenseMatrix& X) {
  const ForwardResult fwd = forward_graph(g, X);
  GraphHyperParams hp;
  hp.depth = g.depth();
  hp.b_active = fwd.b_active;
  hp.width_max = g.input_dim;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    hp.width_max = std::max({hp.width_max, l.stack_rows(), l.output_dim(), l.W.cols()});
    hp.rho.push_back(l.gate.rho);
    const double r_raw = norm21_of_transpose(l.W);
    hp.r_raw.push_back(r_raw);
    hp.r.push_back(std::max(1.0, r_raw));
    const double s_raw = spectral_norm(stacked_block(l));
    hp.s_raw.push_back(s_raw);
    hp.s.push_back(std::max(1.0, s_raw));
    hp.b.push_back(std::max(1.0, l.proj_radius));
  }
  return hp;
}

void DenseChain::validate() const {
  if (weights.empty()) throw std::invalid_argument("chain: no layers");
  if (gates.size() != weights.size())
    throw std::invalid_argument("chain: gates/weights length mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (gates[i] != GateKind::relu && gates[i] != GateKind::identity)
      throw std::invalid_argument("chain: layer " + std::to_string(i) +
                                  " gate must be relu or identity");
    if (weights[i].rows() == 0 || weights[i].cols() == 0)
      throw std::invalid_argument("chain: layer " + std::to_string(i) + " weight is empty");
    if (i > 0 && weights[i].cols() != weights[i - 1].rows())
      throw std::invalid_argument("chain: layer " + std::to_string(i) +
                                  " input dim does not match previous output");
  }
}

std::vector<DenseMatrix> DenseChain::forward_layers(const DenseMatrix& X) const {
  validate();
  if (X.cols() != input_dim())
    throw std::invalid_argument("chain forward: input dimension mismatch");
  std::vector<DenseMatrix> acts;
  acts.reserve(weights.size() + 1);
  acts.push_back(X);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    DenseMatrix h = matmul_nt(acts.back(), weights[i]);
    if (gates[i] == GateKind::relu)
      for (std::size_t t = 0; t < h.size(); ++t)
        if (h.data()[t] < 0.0) h.data()[t] = 0.0;
    acts.push_back(std::move(h));
  }
  return acts;
}

DenseMatrix DenseChain::forward(const DenseMatrix& X) const {
  return forward_layers(X).back();
}

DenseChain to_plain_mlp(const CanonicalGraph& g) {
  g.validate();
  DenseChain chain;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    if (!l.F.empty())
      throw std::invalid_argument("to_plain_mlp: " + where +
                                  "graph has a fixed block (skip connection)");
    if (!l.selector.empty()) {
      for (auto f : l.selector)
        if (!f)
          throw std::invalid_argument("to_plain_mlp: " + where + "selector is not full");
    }
    if (l.gate.kind != GateKind::relu && l.gate.kind != GateKind::identity)
      throw std::invalid_argument("to_plain_mlp: " + where + "gate is not elementwise");
    chain.weights.push_back(l.W);
    chain.gates.push_back(l.gate.kind);
  }
  chain.validate();
  return chain;
}

CanonicalGraph graph_from_chain(const DenseChain& chain, const std::vector<double>& proj_radii) {
  chain.validate();
  if (proj_radii.size() != chain.weights.size())
    throw std::invalid_argument("graph_from_chain: one projection radius per layer required");
  CanonicalGraph g;
  g.input_dim = chain.input_dim();
  for (std::size_t i = 0; i < chain.weights.size(); ++i) {
    GraphLayer l;
    l.W = chain.weights[i];
    l.proj_radius = proj_radii[i];
    l.gate = chain.gates[i] == GateKind::relu ? GateSpec::relu() : GateSpec::identity();
    g.layers.push_back(std::move(l));
  }
  g.validate();
  return g;
}

void fit_projection_radii(CanonicalGraph& g, const DenseMatrix& X) {
  g.validate();
  const double sqrt_n = std::sqrt(static_cast<double>(X.rows()));
  DenseMatrix act = X;
  for (auto& l : g.layers) {
    DenseMatrix selected = apply_selector(act, l.selector);
    const double measured = frobenius_norm(selected) / sqrt_n;
    l.proj_radius = std::max(measured, 1e-12);
    // Radius now equals the realized norm, so this layer's projection is a
    // boundary no-op for X; continue with the unchanged forward values.
    DenseMatrix pre = matmul_nt(selected, l.W);
    if (!l.F.empty()) {
      DenseMatrix fixed = matmul_nt(act, l.F);
      DenseMatrix stacked(pre.rows(), pre.cols() + fixed.cols());
      for (std::size_t i = 0; i < pre.rows(); ++i) {
        for (std::size_t j = 0; j < pre.cols(); ++j) stacked(i, j) = pre(i, j);
        for (std::size_t j = 0; j < fixed.cols(); ++j) stacked(i, pre.cols() + j) = fixed(i, j);
      }
      pre = std::move(stacked);
    }
    act = apply_gate(l.gate, std::move(pre));
  }
}

GraphHyperParams measure_chain_hyperparams(const DenseChain& chain, const DenseMatrix& X) {
  CanonicalGraph g = graph_from_chain(chain, std::vector<double>(chain.weights.size(), 1e15));
  fit_projection_radii(g, X);
  return measure_hyperparams(g, X);
}

namespace {

std::string gate_kind_name(GateKind k) {
  switch (k) {
    case GateKind::relu: return "relu";
    case GateKind::identity: return "identity";
    case GateKind::blockwise: return "blockwise";
    case GateKind::residual: return "residual";
  }
  throw std::logic_error("gate_kind_name");
}

GateKind gate_kind_from(const std::string& s) {
  if (s == "relu") return GateKind::relu;
  if (s == "identity") return GateKind::identity;
  if (s == "blockwise") return GateKind::blockwise;
  if (s == "residual") return GateKind::residual;
  throw ConfigError("unknown gate kind: " + s);
}

}  // namespace

void save_graph(const CanonicalGraph& g, const std::filesystem::path& manifest_path) {
  g.validate();
  const auto dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  if (!dir.empty()) std::filesystem::create_directories(dir);

  json doc;
  doc["format"] = "dcg-1";
  doc["input_dim"] = g.input_dim;
  doc["layers"] = json::array();
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    json jl;
    const std::string wname = stem + "_w" + std::to_string(i) + ".dbm";
    write_dbm(dir / wname, l.W);
    jl["weights"] = wname;
    if (l.selector.empty()) {
      jl["selector"] = "full";
    } else {
      jl["selector"] = json::array();
      for (auto f : l.selector) jl["selector"].push_back(static_cast<int>(f));
    }
    if (l.F.empty()) {
      jl["fixed"] = "empty";
    } else {
      const std::string fname = stem + "_f" + std::to_string(i) + ".dbm";
      write_dbm(dir / fname, l.F);
      jl["fixed"] = fname;
    }
    jl["proj_radius"] = l.proj_radius;
    json jg;
    jg["kind"] = gate_kind_name(l.gate.kind);
    jg["rho"] = l.gate.rho;
    if (l.gate.kind == GateKind::blockwise) {
      jg["blocks"] = json::array();
      for (const auto& b : l.gate.blocks)
        jg["blocks"].push_back({{"kind", gate_kind_name(b.kind)}, {"rows", b.rows}});
    }
    if (l.gate.kind == GateKind::residual) jg["inner"] = gate_kind_name(l.gate.inner);
    jl["gate"] = jg;
    doc["layers"].push_back(jl);
  }

  std::ofstream out(manifest_path);
  if (!out) throw ConfigError("save_graph: cannot open " + manifest_path.string());
  out << doc.dump(2) << "\n";
}

CanonicalGraph load_graph(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("load_graph: cannot open " + manifest_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("load_graph: bad JSON in " + manifest_path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != "dcg-1")
    throw ConfigError("load_graph: unsupported format in " + manifest_path.string());

  const auto dir = manifest_path.parent_path();
  CanonicalGraph g;
  try {
    g.input_dim = doc.at("input_dim").get<std::size_t>();
    for (const auto& jl : doc.at("layers")) {
      GraphLayer l;
      l.W = read_dbm(dir / jl.at("weights").get<std::string>());
      const auto& sel = jl.at("selector");
      if (sel.is_array())
        for (const auto& f : sel) l.selector.push_back(static_cast<std::uint8_t>(f.get<int>()));
      const auto fixed = jl.at("fixed").get<std::string>();
      if (fixed != "empty") l.F = read_dbm(dir / fixed);
      l.proj_radius = jl.at("proj_radius").get<double>();
      const auto& jg = jl.at("gate");
      l.gate.kind = gate_kind_from(jg.at("kind").get<std::string>());
      l.gate.rho = jg.at("rho").get<double>();
      if (l.gate.kind == GateKind::blockwise)
        for (const auto& jb : jg.at("blocks"))
          l.gate.blocks.push_back(GateBlock{gate_kind_from(jb.at("kind").get<std::string>()),
                                            jb.at("rows").get<std::size_t>()});
      if (l.gate.kind == GateKind::residual)
        l.gate.inner = gate_kind_from(jg.at("inner").get<std::string>());
      g.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ConfigError("load_graph: missing or malformed field in " + manifest_path.string() +
                      ": " + e.what());
  }
  g.validate();
  return g;
}

}  // namespace distillbound
