#pragma once

#include "kinodrive/common.hpp"
#include "kinodrive/sim.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace kinodrive::nn {

enum class Activation { relu, tanh, identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct Layer {
  Mat W;  // out x in
  Vec b;
  Activation act = Activation::identity;
};

/// Fully connected network. `version` is bumped by every parameter write
/// that goes through this module, so tapes recorded earlier can be
/// recognised as stale.
struct Mlp {
  std::vector<Layer> layers;
  std::uint64_t version = 0;

  int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols()); }
  int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().W.rows()); }
  std::vector<int> sizes() const;
  long num_params() const;
  void touch() { ++version; }
};

/// Fan-in scaled uniform init, U(-1/sqrt(in), 1/sqrt(in)) for weights and
/// biases alike.
Mlp make_mlp(const std::vector<int>& sizes, Activation hidden, Activation output,
             std::mt19937_64& rng);

/// Same shapes and activations, all parameters zero.
Mlp zeros_like(const Mlp& p);
void set_zero(Mlp& p);

/// Intermediate activations of one forward pass; column-per-sample.
struct MlpTape {
  const Mlp* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Mat> acts;  // acts[0] = input, acts[l + 1] = output of layer l
};

Mat mlp_forward_batch(const Mlp& p, const Mat& x, MlpTape* tape = nullptr);
Vec mlp_forward(const Mlp& p, const Vec& x, MlpTape* tape = nullptr);

/// Reverse pass for the gradient of sum(y .* dy). Parameter gradients are
/// added into `grads` (zeros_like-shaped) when non-null; the input gradient
/// is returned. Throws "stale tape" if `p` changed since the forward pass.
Mat mlp_backward_batch(const Mlp& p, const MlpTape& tape, const Mat& dy, Mlp* grads);
Vec mlp_backward(const Mlp& p, const MlpTape& tape, const Vec& dy, Mlp* grads);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Mlp m;
  Mlp v;
  long t = 0;
};

AdamState adam_init(const Mlp& p);
void adam_step(Mlp& p, const Mlp& grad, AdamState& s, const AdamConfig& cfg);

/// target <- (1 - tau) target + tau online.
void polyak_update(Mlp& target, const Mlp& online, double tau);

/// Header line "mlp n0 n1 ... nL", then per layer the activation name, the
/// weight rows and the bias, each on its own line.
void write_mlp(std::ostream& os, const Mlp& p);
Mlp read_mlp(std::istream& is);

// ---------------------------------------------------------------------------
// Graph convolution

/// Several graphs flattened into one set of columns. Vertex `ego[g]` is
/// graph g's vertex 0 and the target of all its edges.
struct GraphBatch {
  Mat V;  // vertex features, one column per vertex
  Mat E;  // edge features, one column per edge
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<int> ego;

  int graphs() const { return static_cast<int>(ego.size()); }
};

/// Puts the surrounding vertices of each graph into lexicographic feature
/// order (edges follow their source) so that every downstream computation
/// is independent of the order vehicles were listed in.
sim::GraphObs canonicalize(const sim::GraphObs& g);

/// Flattens graphs into a batch. Throws on malformed graphs or mixed
/// feature widths.
GraphBatch make_graph_batch(const std::vector<const sim::GraphObs*>& graphs);

struct ConvTape {
  MlpTape edge;
  MlpTape vertex;
  std::vector<std::vector<int>> incoming;  // per vertex, edge ids in summation order
  Eigen::Index v_dim = 0;
  Eigen::Index e_dim = 0;
};

/// One graph convolutional layer: E' = phi_e([E, V_src, V_dst]) per edge,
/// V' = phi_v([V, sum of incoming E']) per vertex, with an empty sum of zero.
/// Incoming contributions are summed in lexicographic order.
GraphBatch graph_conv_layer(const GraphBatch& g, const Mlp& phi_e, const Mlp& phi_v,
                            ConvTape* tape = nullptr);

/// Reverse pass of graph_conv_layer. dV/dE are gradients w.r.t. the layer
/// outputs (dE may be empty for zero); gradients w.r.t. the inputs are
/// written to dV_in/dE_in.
void graph_conv_backward(const GraphBatch& in, const Mlp& phi_e, const Mlp& phi_v,
                         const ConvTape& tape, const Mat& dV, const Mat& dE, Mat& dV_in,
                         Mat& dE_in, Mlp* grad_e, Mlp* grad_v);

struct GnnConfig {
  int n_layers = 2;
  int hidden = 64;
  int edge_dim = 32;    // width of updated edge features
  int vertex_dim = 32;  // width of updated vertex features
  int feature = 64;
  int in_vertex = 4;
  int in_edge = 4;
};

struct GnnLayer {
  Mlp phi_e;
  Mlp phi_v;
};

struct GnnParams {
  std::vector<GnnLayer> layers;
  Mlp readout;

  int feature_dim() const { return readout.out_dim(); }
  std::vector<Mlp*> nets();
  std::vector<const Mlp*> nets() const;
};

GnnParams make_gnn(const GnnConfig& cfg, std::mt19937_64& rng);
GnnParams zeros_like(const GnnParams& p);

struct GnnTape {
  std::vector<GraphBatch> inputs;  // input of each layer
  std::vector<ConvTape> convs;
  MlpTape readout;
  std::vector<int> ego;
  int n_vertices = 0;
};

/// Readout of the ego vertex after all layers, one column per graph.
Mat gnn_encode_batch(const GnnParams& p, const std::vector<const sim::GraphObs*>& graphs,
                     GnnTape* tape = nullptr);
Vec gnn_encode(const sim::GraphObs& g, const GnnParams& p, GnnTape* tape = nullptr);

/// Adds parameter gradients of sum(F .* dF) into `grads`.
void gnn_backward(const GnnParams& p, const GnnTape& tape, const Mat& dF, GnnParams* grads);

/// State-vector encoder: 43 -> 128 -> 128 -> 64.
Mlp make_state_vector_encoder(std::mt19937_64& rng, int hidden = 128, int feature = 64);
Vec encode_state_vector(const Vec& obs, const Mlp& p, MlpTape* tape = nullptr);

void write_gnn(std::ostream& os, const GnnParams& p);
GnnParams read_gnn(std::istream& is);

}  // namespace kinodrive::nn
