#include "kinodrive/neural.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace kinodrive::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw Error("unknown activation: " + s);
}

std::vector<int> Mlp::sizes() const {
  std::vector<int> s;
  if (layers.empty()) return s;
  s.push_back(in_dim());
  for (const auto& l : layers) s.push_back(static_cast<int>(l.W.rows()));
  return s;
}

long Mlp::num_params() const {
  long n = 0;
  for (const auto& l : layers) n += static_cast<long>(l.W.size() + l.b.size());
  return n;
}

Mlp make_mlp(const std::vector<int>& sizes, Activation hidden, Activation output,
             std::mt19937_64& rng) {
  if (sizes.size() < 2) throw Error("mlp needs at least input and output sizes");
  Mlp p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    if (sizes[i] <= 0 || sizes[i + 1] <= 0) throw Error("layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l;
    l.W.resize(sizes[i + 1], sizes[i]);
    l.b.resize(sizes[i + 1]);
    for (Eigen::Index c = 0; c < l.W.cols(); ++c)
      for (Eigen::Index r = 0; r < l.W.rows(); ++r) l.W(r, c) = u(rng);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = u(rng);
    l.act = (i + 2 == sizes.size()) ? output : hidden;
    p.layers.push_back(std::move(l));
  }
  return p;
}

Mlp zeros_like(const Mlp& p) {
  Mlp z = p;
  set_zero(z);
  return z;
}

void set_zero(Mlp& p) {
  for (auto& l : p.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  p.touch();
}

namespace {

void apply(Activation a, Mat& x) {
  switch (a) {
    case Activation::relu: x = x.cwiseMax(0.0); break;
    case Activation::tanh: x = x.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

// Multiplies the incoming gradient by the activation derivative, expressed
// through the activation output y.
void apply_grad(Activation a, const Mat& y, Mat& g) {
  switch (a) {
    case Activation::relu: g = (y.array() > 0.0).select(g, 0.0); break;
    case Activation::tanh: g.array() *= 1.0 - y.array().square(); break;
    case Activation::identity: break;
  }
}

}  // namespace

Mat mlp_forward_batch(const Mlp& p, const Mat& x, MlpTape* tape) {
  if (p.layers.empty()) throw Error("empty network");
  if (x.rows() != p.in_dim()) {
    throw Error("dimension mismatch: network expects " + std::to_string(p.in_dim()) + ", got " +
                std::to_string(x.rows()));
  }
  if (tape) {
    tape->owner = &p;
    tape->version = p.version;
    tape->acts.clear();
    tape->acts.push_back(x);
  }
  Mat h = x;
  for (const auto& l : p.layers) {
    Mat z = l.W * h;
    z.colwise() += l.b;
    apply(l.act, z);
    h = std::move(z);
    if (tape) tape->acts.push_back(h);
  }
  return h;
}

Vec mlp_forward(const Mlp& p, const Vec& x, MlpTape* tape) {
  return mlp_forward_batch(p, Mat(x), tape).col(0);
}

Mat mlp_backward_batch(const Mlp& p, const MlpTape& tape, const Mat& dy, Mlp* grads) {
  if (tape.owner != &p || tape.version != p.version || tape.acts.size() != p.layers.size() + 1) {
    throw Error("stale tape");
  }
  if (dy.rows() != p.out_dim() || dy.cols() != tape.acts.back().cols()) {
    throw Error("dimension mismatch: output gradient");
  }
  if (grads && grads->sizes() != p.sizes()) throw Error("dimension mismatch: gradient buffer");
  Mat g = dy;
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    const Layer& l = p.layers[i];
    apply_grad(l.act, tape.acts[i + 1], g);
    if (grads) {
      grads->layers[i].W.noalias() += g * tape.acts[i].transpose();
      grads->layers[i].b += g.rowwise().sum();
    }
    g = l.W.transpose() * g;
  }
  if (grads) grads->touch();
  return g;
}

Vec mlp_backward(const Mlp& p, const MlpTape& tape, const Vec& dy, Mlp* grads) {
  return mlp_backward_batch(p, tape, Mat(dy), grads).col(0);
}

AdamState adam_init(const Mlp& p) {
  AdamState s;
  s.m = zeros_like(p);
  s.v = zeros_like(p);
  return s;
}

void adam_step(Mlp& p, const Mlp& grad, AdamState& s, const AdamConfig& cfg) {
  if (grad.sizes() != p.sizes() || s.m.sizes() != p.sizes()) throw Error("dimension mismatch: adam");
  ++s.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  auto upd = [&](auto& w, const auto& g, auto& m, auto& v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    w.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  };
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    upd(p.layers[i].W, grad.layers[i].W, s.m.layers[i].W, s.v.layers[i].W);
    upd(p.layers[i].b, grad.layers[i].b, s.m.layers[i].b, s.v.layers[i].b);
  }
  p.touch();
}

void polyak_update(Mlp& target, const Mlp& online, double tau) {
  if (target.sizes() != online.sizes()) throw Error("dimension mismatch: polyak");
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    target.layers[i].W = (1.0 - tau) * target.layers[i].W + tau * online.layers[i].W;
    target.layers[i].b = (1.0 - tau) * target.layers[i].b + tau * online.layers[i].b;
  }
  target.touch();
}

void write_mlp(std::ostream& os, const Mlp& p) {
  const auto prec = os.precision(std::numeric_limits<double>::max_digits10);
  os << "mlp";
  for (int s : p.sizes()) os << ' ' << s;
  os << '\n';
  for (const auto& l : p.layers) {
    os << to_string(l.act) << '\n';
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) os << (c ? " " : "") << l.W(r, c);
      os << '\n';
    }
    for (Eigen::Index r = 0; r < l.b.size(); ++r) os << (r ? " " : "") << l.b[r];
    os << '\n';
  }
  os.precision(prec);
}

namespace {

std::string next_line(std::istream& is, const char* what) {
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) return line;
  }
  throw Error(std::string("truncated checkpoint: expected ") + what);
}

Vec read_row(std::istream& is, Eigen::Index n, const char* what) {
  std::istringstream ss(next_line(is, what));
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(ss >> v[i])) throw Error(std::string("malformed checkpoint row: ") + what);
  }
  double extra = 0.0;
  if (ss >> extra) throw Error(std::string("malformed checkpoint row: ") + what);
  return v;
}

}  // namespace

Mlp read_mlp(std::istream& is) {
  std::istringstream hs(next_line(is, "mlp header"));
  std::string tag;
  hs >> tag;
  if (tag != "mlp") throw Error("malformed checkpoint: expected mlp header");
  std::vector<int> sizes;
  int s = 0;
  while (hs >> s) sizes.push_back(s);
  if (sizes.size() < 2) throw Error("malformed checkpoint: mlp header");
  Mlp p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Layer l;
    l.act = parse_activation(next_line(is, "activation"));
    l.W.resize(sizes[i + 1], sizes[i]);
    for (int r = 0; r < sizes[i + 1]; ++r) l.W.row(r) = read_row(is, sizes[i], "weights").transpose();
    l.b = read_row(is, sizes[i + 1], "bias");
    p.layers.push_back(std::move(l));
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

bool lex_less(const Vec& a, const Vec& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

void check_graph(const sim::GraphObs& g) {
  if (g.vertices.empty()) throw Error("malformed graph: no ego vertex");
  const Eigen::Index vd = g.vertices.front().size();
  for (const auto& v : g.vertices) {
    if (v.size() != vd) throw Error("malformed graph: mixed vertex widths");
  }
  for (const auto& e : g.edges) {
    if (e.src < 1 || e.src >= static_cast<int>(g.vertices.size())) {
      throw Error("malformed graph: edge source out of range");
    }
    if (e.feature.size() != g.edges.front().feature.size()) {
      throw Error("malformed graph: mixed edge widths");
    }
  }
}

}  // namespace

sim::GraphObs canonicalize(const sim::GraphObs& g) {
  check_graph(g);
  const int n = static_cast<int>(g.vertices.size());
  std::vector<std::vector<const Vec*>> out_edges(static_cast<std::size_t>(n));
  for (const auto& e : g.edges) out_edges[static_cast<std::size_t>(e.src)].push_back(&e.feature);
  for (auto& oe : out_edges) {
    std::sort(oe.begin(), oe.end(), [](const Vec* a, const Vec* b) { return lex_less(*a, *b); });
  }
  std::vector<int> order(static_cast<std::size_t>(std::max(0, n - 1)));
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const Vec& va = g.vertices[static_cast<std::size_t>(a)];
    const Vec& vb = g.vertices[static_cast<std::size_t>(b)];
    if (lex_less(va, vb)) return true;
    if (lex_less(vb, va)) return false;
    const auto& ea = out_edges[static_cast<std::size_t>(a)];
    const auto& eb = out_edges[static_cast<std::size_t>(b)];
    return std::lexicographical_compare(ea.begin(), ea.end(), eb.begin(), eb.end(),
                                        [](const Vec* x, const Vec* y) { return lex_less(*x, *y); });
  });
  sim::GraphObs c;
  c.vertices.push_back(g.vertices.front());
  for (int i = 0; i < n - 1; ++i) {
    const int old = order[static_cast<std::size_t>(i)];
    c.vertices.push_back(g.vertices[static_cast<std::size_t>(old)]);
    for (const Vec* f : out_edges[static_cast<std::size_t>(old)]) c.edges.push_back({i + 1, *f});
  }
  return c;
}

GraphBatch make_graph_batch(const std::vector<const sim::GraphObs*>& graphs) {
  GraphBatch b;
  Eigen::Index vd = -1, ed = -1, nv = 0, ne = 0;
  for (const auto* g : graphs) {
    check_graph(*g);
    if (vd >= 0 && g->vertices.front().size() != vd) throw Error("malformed graph: mixed vertex widths");
    vd = g->vertices.front().size();
    if (!g->edges.empty()) {
      if (ed >= 0 && g->edges.front().feature.size() != ed) throw Error("malformed graph: mixed edge widths");
      ed = g->edges.front().feature.size();
    }
    nv += static_cast<Eigen::Index>(g->vertices.size());
    ne += static_cast<Eigen::Index>(g->edges.size());
  }
  b.V.resize(std::max<Eigen::Index>(vd, 0), nv);
  b.E.resize(std::max<Eigen::Index>(ed, 0), ne);
  Eigen::Index vi = 0, ei = 0;
  for (const auto* g : graphs) {
    const sim::GraphObs c = canonicalize(*g);
    const int base = static_cast<int>(vi);
    b.ego.push_back(base);
    for (const auto& v : c.vertices) b.V.col(vi++) = v;
    for (const auto& e : c.edges) {
      b.E.col(ei++) = e.feature;
      b.src.push_back(base + e.src);
      b.dst.push_back(base);
    }
  }
  return b;
}

GraphBatch graph_conv_layer(const GraphBatch& g, const Mlp& phi_e, const Mlp& phi_v, ConvTape* tape) {
  const Eigen::Index vd = g.V.rows();
  const Eigen::Index ed = phi_e.in_dim() - 2 * vd;
  const Eigen::Index nv = g.V.cols();
  const Eigen::Index ne = static_cast<Eigen::Index>(g.src.size());
  if (ed < 0 || (ne > 0 && g.E.rows() != ed) || g.E.cols() != ne) {
    throw Error("dimension mismatch: edge network input");
  }
  if (phi_v.in_dim() != vd + phi_e.out_dim()) throw Error("dimension mismatch: vertex network input");
  const Eigen::Index eo = phi_e.out_dim();

  GraphBatch out;
  out.src = g.src;
  out.dst = g.dst;
  out.ego = g.ego;
  MlpTape* et = tape ? &tape->edge : nullptr;
  if (ne > 0) {
    Mat ein(ed + 2 * vd, ne);
    for (Eigen::Index j = 0; j < ne; ++j) {
      ein.col(j) << g.E.col(j), g.V.col(g.src[static_cast<std::size_t>(j)]),
          g.V.col(g.dst[static_cast<std::size_t>(j)]);
    }
    out.E = mlp_forward_batch(phi_e, ein, et);
  } else {
    out.E.resize(eo, 0);
    if (et) *et = MlpTape{};
  }

  std::vector<std::vector<int>> incoming(static_cast<std::size_t>(nv));
  for (Eigen::Index j = 0; j < ne; ++j) {
    incoming[static_cast<std::size_t>(g.dst[static_cast<std::size_t>(j)])].push_back(static_cast<int>(j));
  }
  Mat vin(vd + eo, nv);
  vin.topRows(vd) = g.V;
  vin.bottomRows(eo).setZero();
  for (Eigen::Index i = 0; i < nv; ++i) {
    auto& inc = incoming[static_cast<std::size_t>(i)];
    if (inc.empty()) continue;
    std::stable_sort(inc.begin(), inc.end(), [&](int a, int b) {
      return lex_less(out.E.col(a), out.E.col(b));
    });
    Vec agg = Vec::Zero(eo);
    for (int j : inc) agg += out.E.col(j);
    vin.col(i).tail(eo) = agg;
  }
  out.V = mlp_forward_batch(phi_v, vin, tape ? &tape->vertex : nullptr);
  if (tape) {
    tape->incoming = std::move(incoming);
    tape->v_dim = vd;
    tape->e_dim = ed;
  }
  return out;
}

void graph_conv_backward(const GraphBatch& in, const Mlp& phi_e, const Mlp& phi_v,
                         const ConvTape& tape, const Mat& dV, const Mat& dE, Mat& dV_in,
                         Mat& dE_in, Mlp* grad_e, Mlp* grad_v) {
  const Eigen::Index vd = tape.v_dim;
  const Eigen::Index ed = tape.e_dim;
  const Eigen::Index eo = phi_e.out_dim();
  const Eigen::Index ne = static_cast<Eigen::Index>(in.src.size());
  const Mat dvin = mlp_backward_batch(phi_v, tape.vertex, dV, grad_v);
  dV_in = dvin.topRows(vd);
  dE_in = Mat::Zero(ed, ne);
  if (ne == 0) return;
  Mat dEo = (dE.size() == 0) ? Mat::Zero(eo, ne) : dE;
  for (Eigen::Index j = 0; j < ne; ++j) {
    dEo.col(j) += dvin.col(in.dst[static_cast<std::size_t>(j)]).tail(eo);
  }
  const Mat dein = mlp_backward_batch(phi_e, tape.edge, dEo, grad_e);
  dE_in = dein.topRows(ed);
  for (Eigen::Index j = 0; j < ne; ++j) {
    dV_in.col(in.src[static_cast<std::size_t>(j)]) += dein.col(j).segment(ed, vd);
    dV_in.col(in.dst[static_cast<std::size_t>(j)]) += dein.col(j).tail(vd);
  }
}

std::vector<Mlp*> GnnParams::nets() {
  std::vector<Mlp*> n;
  for (auto& l : layers) {
    n.push_back(&l.phi_e);
    n.push_back(&l.phi_v);
  }
  n.push_back(&readout);
  return n;
}

std::vector<const Mlp*> GnnParams::nets() const {
  std::vector<const Mlp*> n;
  for (const auto& l : layers) {
    n.push_back(&l.phi_e);
    n.push_back(&l.phi_v);
  }
  n.push_back(&readout);
  return n;
}

GnnParams make_gnn(const GnnConfig& cfg, std::mt19937_64& rng) {
  if (cfg.n_layers < 1) throw Error("gnn needs at least one layer");
  GnnParams p;
  int v = cfg.in_vertex;
  int e = cfg.in_edge;
  for (int l = 0; l < cfg.n_layers; ++l) {
    GnnLayer layer;
    layer.phi_e = make_mlp({e + 2 * v, cfg.hidden, cfg.edge_dim}, Activation::relu, Activation::relu, rng);
    layer.phi_v = make_mlp({v + cfg.edge_dim, cfg.hidden, cfg.vertex_dim}, Activation::relu,
                           Activation::relu, rng);
    p.layers.push_back(std::move(layer));
    v = cfg.vertex_dim;
    e = cfg.edge_dim;
  }
  p.readout = make_mlp({v, cfg.feature}, Activation::identity, Activation::tanh, rng);
  return p;
}

GnnParams zeros_like(const GnnParams& p) {
  GnnParams z = p;
  for (Mlp* m : z.nets()) set_zero(*m);
  return z;
}

Mat gnn_encode_batch(const GnnParams& p, const std::vector<const sim::GraphObs*>& graphs, GnnTape* tape) {
  GraphBatch g = make_graph_batch(graphs);
  if (g.V.rows() != p.layers.front().phi_v.in_dim() - p.layers.front().phi_e.out_dim()) {
    throw Error("dimension mismatch: vertex features");
  }
  if (tape) {
    tape->inputs.clear();
    tape->convs.assign(p.layers.size(), ConvTape{});
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    GraphBatch next = graph_conv_layer(g, p.layers[l].phi_e, p.layers[l].phi_v,
                                       tape ? &tape->convs[l] : nullptr);
    if (tape) tape->inputs.push_back(std::move(g));
    g = std::move(next);
  }
  Mat ego(g.V.rows(), g.graphs());
  for (int i = 0; i < g.graphs(); ++i) ego.col(i) = g.V.col(g.ego[static_cast<std::size_t>(i)]);
  if (tape) {
    tape->ego = g.ego;
    tape->n_vertices = static_cast<int>(g.V.cols());
  }
  return mlp_forward_batch(p.readout, ego, tape ? &tape->readout : nullptr);
}

Vec gnn_encode(const sim::GraphObs& g, const GnnParams& p, GnnTape* tape) {
  return gnn_encode_batch(p, {&g}, tape).col(0);
}

void gnn_backward(const GnnParams& p, const GnnTape& tape, const Mat& dF, GnnParams* grads) {
  if (tape.convs.size() != p.layers.size() || tape.inputs.size() != p.layers.size()) {
    throw Error("stale tape");
  }
  const Mat dego = mlp_backward_batch(p.readout, tape.readout, dF, grads ? &grads->readout : nullptr);
  Mat dV = Mat::Zero(dego.rows(), tape.n_vertices);
  for (std::size_t i = 0; i < tape.ego.size(); ++i) dV.col(tape.ego[i]) = dego.col(static_cast<Eigen::Index>(i));
  Mat dE;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    Mat dV_in, dE_in;
    graph_conv_backward(tape.inputs[l], p.layers[l].phi_e, p.layers[l].phi_v, tape.convs[l], dV, dE,
                        dV_in, dE_in, grads ? &grads->layers[l].phi_e : nullptr,
                        grads ? &grads->layers[l].phi_v : nullptr);
    dV = std::move(dV_in);
    dE = std::move(dE_in);
  }
}

Mlp make_state_vector_encoder(std::mt19937_64& rng, int hidden, int feature) {
  return make_mlp({sim::kStateVectorDim, hidden, hidden, feature}, Activation::relu, Activation::tanh, rng);
}

Vec encode_state_vector(const Vec& obs, const Mlp& p, MlpTape* tape) {
  if (obs.size() != sim::kStateVectorDim) throw Error("dimension mismatch: state vector");
  return mlp_forward(p, obs, tape);
}

void write_gnn(std::ostream& os, const GnnParams& p) {
  os << "gnn " << p.layers.size() << '\n';
  for (const auto& l : p.layers) {
    write_mlp(os, l.phi_e);
    write_mlp(os, l.phi_v);
  }
  write_mlp(os, p.readout);
}

GnnParams read_gnn(std::istream& is) {
  std::istringstream hs(next_line(is, "gnn header"));
  std::string tag;
  int n = 0;
  if (!(hs >> tag >> n) || tag != "gnn" || n < 1) throw Error("malformed checkpoint: gnn header");
  GnnParams p;
  for (int l = 0; l < n; ++l) {
    GnnLayer layer;
    layer.phi_e = read_mlp(is);
    layer.phi_v = read_mlp(is);
    p.layers.push_back(std::move(layer));
  }
  p.readout = read_mlp(is);
  return p;
}

}  // namespace kinodrive::nn
