#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "distillbound/matrix.hpp"

namespace distillbound {

// Gates are Lipschitz maps applied after the linear block of a layer.
//   relu / identity: elementwise.
//   blockwise:       consecutive row blocks, each relu or identity.
//   residual:        input rows split in two equal halves (u, v); output is
//                    inner(u) + v. This is how a skip connection rejoins the
//                    trunk; its Lipschitz constant wrt the stacked input is
//                    sqrt(2).
enum class GateKind { relu, identity, blockwise, residual };

struct GateBlock {
  GateKind kind;  // relu or identity only
  std::size_t rows;
};

struct GateSpec {
  GateKind kind = GateKind::relu;
  double rho = 1.0;  // declared Lipschitz bound; must dominate the gate's true constant
  std::vector<GateBlock> blocks;    // blockwise only
  GateKind inner = GateKind::relu;  // residual only

  static GateSpec relu();
  static GateSpec identity();
  static GateSpec blockwise_of(std::vector<GateBlock> blocks, double rho = 1.0);
  static GateSpec residual(GateKind inner_kind);

  std::size_t output_rows(std::size_t in_rows) const;
  void validate(std::size_t in_rows, std::size_t layer_index) const;
};

// One layer of a canonical computation graph. On a transposed batch T
// (d_in x n) the layer computes
//
//   gate( [ W * proj( D * T ) ]  stacked over  [ F * T ] )
//
// where D zeroes the non-selected coordinates, proj is Frobenius projection
// onto radius proj_radius * sqrt(n), W is the trainable matrix and F is a
// fixed (non-trainable) matrix that may be absent. F sees the raw input, not
// the projected one: skips bypass the projection.
struct GraphLayer {
  DenseMatrix W;
  std::vector<std::uint8_t> selector;  // empty = all coordinates; else d_in flags
  DenseMatrix F;                       // 0x0 = absent
  double proj_radius = 1e15;           // per-example radius b_i
  GateSpec gate;

  std::size_t stack_rows() const { return W.rows() + F.rows(); }
  std::size_t output_dim() const { return gate.output_rows(stack_rows()); }
};

struct CanonicalGraph {
  std::size_t input_dim = 0;
  std::vector<GraphLayer> layers;

  std::size_t output_dim() const;
  std::size_t depth() const { return layers.size(); }
  // Checks selector sizes, dimension composition and gate declarations.
  // Throws std::invalid_argument naming the offending layer.
  void validate() const;
};

struct ForwardResult {
  std::vector<DenseMatrix> activations;  // X_0 .. X_L, each n x d_i
  std::vector<double> b_active;          // ||proj(D X^T)||_F / sqrt(n) per layer
  std::vector<bool> projection_active;   // whether the projection rescaled
};

ForwardResult forward_graph(const CanonicalGraph& g, const DenseMatrix& X);
DenseMatrix forward_logits(const CanonicalGraph& g, const DenseMatrix& X);

// Per-layer hyperparameters of the graph as a hypothesis class. b, r, s are
// clamped at 1 (the complexity bounds require it); the raw measurements ride
// along for diagnostics. s is the spectral norm of [W D ; F] with the
// projection omitted; b is the configured projection radius, which is
// authoritative - b_active only reports what the given batch realized.
struct GraphHyperParams {
  std::vector<double> rho, b, r, s;
  std::vector<double> r_raw, s_raw, b_active;
  std::size_t width_max = 0;
  std::size_t depth = 0;
};

GraphHyperParams measure_hyperparams(const CanonicalGraph& g, const DenseMatrix& X);

// A plain dense chain: out = gate_L(W_L ... gate_1(W_1 x)). The trainer and
// the stable-rank bound operate on this view.
struct DenseChain {
  std::vector<DenseMatrix> weights;  // W_i: out x in
  std::vector<GateKind> gates;       // relu or identity, one per layer

  std::size_t input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  std::size_t output_dim() const { return weights.empty() ? 0 : weights.back().rows(); }
  void validate() const;
  DenseMatrix forward(const DenseMatrix& X) const;
  // Activations X_0 .. X_L (X_0 = input).
  std::vector<DenseMatrix> forward_layers(const DenseMatrix& X) const;
};

// Conversions. to_plain_mlp requires every layer to have an absent F, a full
// selector and an elementwise gate; anything else throws.
DenseChain to_plain_mlp(const CanonicalGraph& g);
CanonicalGraph graph_from_chain(const DenseChain& chain, const std::vector<double>& proj_radii);

// Measured mode for projection radii: runs the batch through the graph and
// sets each layer's radius to exactly the norm the batch realizes, so the
// projections sit on the boundary and the forward map is unchanged on X.
void fit_projection_radii(CanonicalGraph& g, const DenseMatrix& X);

// Chain hyperparameters with projection radii fit on X (the usual way a
// trained chain enters the bound evaluators).
GraphHyperParams measure_chain_hyperparams(const DenseChain& chain, const DenseMatrix& X);

// JSON manifest next to per-layer DBM1 weight blobs (paths relative to the
// manifest). Round-trips bit-exactly.
void save_graph(const CanonicalGraph& g, const std::filesystem::path& manifest_path);
CanonicalGraph load_graph(const std::filesystem::path& manifest_path);

}  // namespace distillbound
