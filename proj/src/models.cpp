#include "sbench/models.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

namespace sbench::models {

using ad::Tape;
using ad::Var;

namespace {

const std::pair<Arch, const char*> kArchNames[] = {
    {Arch::AR1X, "AR1X"},           {Arch::NLINEAR, "NLINEAR"},
    {Arch::DLINEAR, "DLINEAR"},     {Arch::LSTM, "LSTM"},
    {Arch::VLSTM, "VLSTM"},         {Arch::XLSTM, "XLSTM"},
    {Arch::VXLSTM, "VXLSTM"},       {Arch::PATCHTST, "PATCHTST"},
    {Arch::LPATCHTST, "LPATCHTST"}, {Arch::PSLSTM, "PSLSTM"},
    {Arch::MAMBA2, "MAMBA2"},       {Arch::VSN_MAMBA2, "VSN_MAMBA2"},
};

}  // namespace

Arch arch_from_string(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), ::toupper);
  for (auto& [a, n] : kArchNames)
    if (u == n) return a;
  throw ConfigError("unknown architecture: " + s);
}

std::string arch_name(Arch a) {
  for (auto& [x, n] : kArchNames)
    if (x == a) return n;
  return "?";
}

const std::vector<Arch>& all_archs() {
  static const std::vector<Arch> v = [] {
    std::vector<Arch> out;
    for (auto& [a, n] : kArchNames) out.push_back(a);
    return out;
  }();
  return v;
}

double ModelSpec::extra(const std::string& key, double fallback) const {
  auto it = extras.find(key);
  return it == extras.end() ? fallback : it->second;
}

std::string ModelSpec::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "arch=" << arch_name(arch) << ";hidden_dim=" << hidden_dim << ";layers=" << layers
     << ";seq_len=" << seq_len << ";dropout=" << dropout << ";embed_dim=" << embed_dim
     << ";patch_len=" << patch_len << ";stride=" << stride << ";heads=" << heads
     << ";ssm_state=" << ssm_state << ";n_features=" << n_features
     << ";n_tickers=" << n_tickers << ";extras={";
  bool first = true;
  for (const auto& [k, v] : extras) {
    if (!first) os << ",";
    os << k << ":" << v;
    first = false;
  }
  os << "}";
  return os.str();
}

ModelSpec spec_from_canonical(const std::string& text) {
  ModelSpec s;
  s.extras.clear();
  std::string extras_part;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ';')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "arch")
      s.arch = arch_from_string(value);
    else if (key == "hidden_dim")
      s.hidden_dim = std::stoi(value);
    else if (key == "layers")
      s.layers = std::stoi(value);
    else if (key == "seq_len")
      s.seq_len = std::stoi(value);
    else if (key == "dropout")
      s.dropout = std::stod(value);
    else if (key == "embed_dim")
      s.embed_dim = std::stoi(value);
    else if (key == "patch_len")
      s.patch_len = std::stoi(value);
    else if (key == "stride")
      s.stride = std::stoi(value);
    else if (key == "heads")
      s.heads = std::stoi(value);
    else if (key == "ssm_state")
      s.ssm_state = std::stoi(value);
    else if (key == "n_features")
      s.n_features = std::stoi(value);
    else if (key == "n_tickers")
      s.n_tickers = std::stoi(value);
    else if (key == "extras")
      extras_part = value;
  }
  if (extras_part.size() >= 2 && extras_part.front() == '{') {
    std::string inner = extras_part.substr(1, extras_part.size() - 2);
    std::stringstream es(inner);
    std::string kv;
    while (std::getline(es, kv, ',')) {
      auto c = kv.find(':');
      if (c != std::string::npos) s.extras[kv.substr(0, c)] = std::stod(kv.substr(c + 1));
    }
  }
  return s;
}

void ModelSpec::validate() const {
  if (hidden_dim < 1 || seq_len < 1 || layers < 1)
    throw ConfigError("model spec: hidden_dim, seq_len, layers must be >= 1");
  if (dropout < 0 || dropout >= 1) throw ConfigError("model spec: dropout must lie in [0,1)");
  if (embed_dim < 0) throw ConfigError("model spec: embed_dim must be >= 0");
  const bool patching =
      arch == Arch::PATCHTST || arch == Arch::LPATCHTST || arch == Arch::PSLSTM;
  if (patching) {
    if (patch_len < 1 || stride < 1) throw ConfigError("model spec: patch_len/stride >= 1");
    if (patch_len > seq_len) throw ConfigError("model spec: patch_len exceeds seq_len");
  }
  if ((arch == Arch::PATCHTST || arch == Arch::LPATCHTST) &&
      (heads < 1 || hidden_dim % heads != 0))
    throw ConfigError("model spec: heads must divide hidden_dim");
  if ((arch == Arch::MAMBA2 || arch == Arch::VSN_MAMBA2) && ssm_state < 1)
    throw ConfigError("model spec: ssm_state must be >= 1");
  if (arch == Arch::AR1X && (extra("p", 1) < 1 || extra("p", 1) > seq_len))
    throw ConfigError("model spec: AR lag order p must lie in [1, seq_len]");
  if (n_features < 1 || n_tickers < 1)
    throw ConfigError("model spec: n_features/n_tickers must be >= 1");
}

// --- ParamSet ----------------------------------------------------------------

void ParamSet::add(const std::string& name, MatrixXd m) {
  names.push_back(name);
  values.push_back(std::move(m));
}

int ParamSet::index(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

const MatrixXd& ParamSet::at(const std::string& name) const {
  int i = index(name);
  if (i < 0) throw ConfigError("missing parameter array: " + name);
  return values[i];
}

MatrixXd& ParamSet::at(const std::string& name) {
  int i = index(name);
  if (i < 0) throw ConfigError("missing parameter array: " + name);
  return values[i];
}

size_t ParamSet::total_size() const {
  size_t n = 0;
  for (const auto& v : values) n += static_cast<size_t>(v.size());
  return n;
}

// --- initialization ----------------------------------------------------------

namespace {

struct Init {
  std::mt19937_64 rng;
  explicit Init(std::uint64_t seed) : rng(seed) {}

  MatrixXd uniform(Eigen::Index r, Eigen::Index c, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
  }
  // uniform fan-in scaling: rows are the input dimension
  MatrixXd weight(Eigen::Index in, Eigen::Index out) {
    return uniform(in, out, 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(in, 1))));
  }
  MatrixXd zeros(Eigen::Index r, Eigen::Index c) { return MatrixXd::Zero(r, c); }
};

int input_dim(const ModelSpec& s) { return s.n_features + s.embed_dim; }

void add_lstm(ParamSet& p, Init& init, const std::string& pre, int in, int h,
              bool forget_bias_one) {
  p.add(pre + "wf", init.weight(in, h));
  p.add(pre + "wi", init.weight(in, h));
  p.add(pre + "wo", init.weight(in, h));
  p.add(pre + "wc", init.weight(in, h));
  p.add(pre + "uf", init.weight(h, h));
  p.add(pre + "ui", init.weight(h, h));
  p.add(pre + "uo", init.weight(h, h));
  p.add(pre + "bf", forget_bias_one ? MatrixXd::Ones(1, h) : init.zeros(1, h));
  p.add(pre + "bi", init.zeros(1, h));
  p.add(pre + "bo", init.zeros(1, h));
}

void add_slstm(ParamSet& p, Init& init, const std::string& pre, int in, int h) {
  p.add(pre + "wz", init.weight(in, h));
  p.add(pre + "wf", init.weight(in, h));
  p.add(pre + "wi", init.weight(in, h));
  p.add(pre + "wo", init.weight(in, h));
  p.add(pre + "rz", init.weight(h, h));
  p.add(pre + "rf", init.weight(h, h));
  p.add(pre + "ri", init.weight(h, h));
  p.add(pre + "ro", init.weight(h, h));
  p.add(pre + "bz", init.zeros(1, h));
  p.add(pre + "bf", init.zeros(1, h));
  p.add(pre + "bi", init.zeros(1, h));
  p.add(pre + "bo", init.zeros(1, h));
}

void add_mlstm(ParamSet& p, Init& init, const std::string& pre, int in, int d) {
  p.add(pre + "wq", init.weight(in, d));
  p.add(pre + "wk", init.weight(in, d));
  p.add(pre + "wv", init.weight(in, d));
  p.add(pre + "bq", init.zeros(1, d));
  p.add(pre + "bk", init.zeros(1, d));
  p.add(pre + "bv", init.zeros(1, d));
  p.add(pre + "wfg", init.weight(in, 1));
  p.add(pre + "bfg", init.zeros(1, 1));
  p.add(pre + "wig", init.weight(in, 1));
  p.add(pre + "big", init.zeros(1, 1));
  p.add(pre + "wog", init.weight(in, d));
  p.add(pre + "bog", init.zeros(1, d));
}

void add_vsn(ParamSet& p, Init& init, const std::string& pre, int c, int h) {
  p.add(pre + "emb_w1", init.weight(c, h));  // row i: scalar-input weights of var i
  p.add(pre + "emb_b1", init.zeros(c, h));
  MatrixXd w2(c * h, h);
  for (int i = 0; i < c; ++i) w2.middleRows(i * h, h) = init.weight(h, h);
  p.add(pre + "emb_w2", std::move(w2));
  p.add(pre + "emb_b2", init.zeros(c, h));
  p.add(pre + "gate_w", init.weight(c * h, c));
  p.add(pre + "gate_b", init.zeros(1, c));
}

void add_attention_stack(ParamSet& p, Init& init, int layers, int h, int ffn) {
  for (int l = 0; l < layers; ++l) {
    const std::string a = "attn" + std::to_string(l) + "_";
    p.add(a + "wq", init.weight(h, h));
    p.add(a + "wk", init.weight(h, h));
    p.add(a + "wv", init.weight(h, h));
    p.add(a + "wo", init.weight(h, h));
    p.add(a + "bq", init.zeros(1, h));
    p.add(a + "bk", init.zeros(1, h));
    p.add(a + "bv", init.zeros(1, h));
    p.add(a + "bo", init.zeros(1, h));
    const std::string ln = "ln" + std::to_string(l);
    p.add(ln + "a_g", MatrixXd::Ones(1, h));
    p.add(ln + "a_b", init.zeros(1, h));
    p.add(ln + "b_g", MatrixXd::Ones(1, h));
    p.add(ln + "b_b", init.zeros(1, h));
    const std::string f = "ffn" + std::to_string(l) + "_";
    p.add(f + "w1", init.weight(h, ffn));
    p.add(f + "b1", init.zeros(1, ffn));
    p.add(f + "w2", init.weight(ffn, h));
    p.add(f + "b2", init.zeros(1, h));
  }
}

}  // namespace

int head_dim(const ModelSpec& s) {
  switch (s.arch) {
    case Arch::AR1X:
    case Arch::NLINEAR:
    case Arch::DLINEAR:
      return input_dim(s);
    case Arch::PATCHTST:
    case Arch::LPATCHTST:
    case Arch::PSLSTM:
      return input_dim(s) * s.hidden_dim;
    default:
      return s.hidden_dim;
  }
}

int arch_burn_in(const ModelSpec& s) {
  switch (s.arch) {
    case Arch::AR1X:
      return static_cast<int>(s.extra("p", 1)) - 1;
    case Arch::PATCHTST:
    case Arch::LPATCHTST:
    case Arch::PSLSTM:
      return s.patch_len - 1;
    default:
      return 0;
  }
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Init init(seed ^ fnv1a(spec.canonical()));
  ParamSet p;
  const int cin = input_dim(spec);
  const int h = spec.hidden_dim;

  if (spec.embed_dim > 0) p.add("embed_table", init.uniform(spec.n_tickers, spec.embed_dim, 0.1));

  switch (spec.arch) {
    case Arch::AR1X: {
      const int lags = static_cast<int>(spec.extra("p", 1));
      p.add("ar_phi", init.uniform(lags, cin, 0.1));
      break;
    }
    case Arch::NLINEAR: {
      p.add("lin_w", init.weight(spec.seq_len, spec.seq_len));
      p.add("lin_b", init.zeros(1, spec.seq_len));
      break;
    }
    case Arch::DLINEAR: {
      p.add("trend_w", init.weight(spec.seq_len, spec.seq_len));
      p.add("resid_w", init.weight(spec.seq_len, spec.seq_len));
      p.add("lin_b", init.zeros(1, spec.seq_len));
      break;
    }
    case Arch::LSTM: {
      for (int l = 0; l < spec.layers; ++l)
        add_lstm(p, init, "lstm" + std::to_string(l) + "_", l == 0 ? cin : h, h, true);
      break;
    }
    case Arch::VLSTM: {
      add_vsn(p, init, "vsn_", cin, h);
      for (int l = 0; l < spec.layers; ++l)
        add_lstm(p, init, "lstm" + std::to_string(l) + "_", h, h, true);
      break;
    }
    case Arch::XLSTM:
    case Arch::VXLSTM: {
      const bool vsn = spec.arch == Arch::VXLSTM;
      if (vsn) add_vsn(p, init, "vsn_", cin, h);
      const int in0 = vsn ? h : cin;
      if (spec.layers == 1) {
        add_slstm(p, init, "slstm0_", in0, h);
      } else {
        p.add("xemb_w", init.weight(in0, h));
        p.add("xemb_b", init.zeros(1, h));
        for (int l = 0; l < spec.layers; ++l) {
          p.add("xln" + std::to_string(l) + "_g", MatrixXd::Ones(1, h));
          p.add("xln" + std::to_string(l) + "_b", init.zeros(1, h));
          if (l % 2 == 0)
            add_slstm(p, init, "slstm" + std::to_string(l) + "_", h, h);
          else
            add_mlstm(p, init, "mlstm" + std::to_string(l) + "_", h, h);
        }
      }
      break;
    }
    case Arch::PATCHTST: {
      p.add("pemb_w", init.weight(spec.patch_len, h));
      p.add("pemb_b", init.zeros(1, h));
      p.add("pos", init.uniform(patch_count(spec.seq_len, spec.patch_len, spec.stride), h, 0.1));
      add_attention_stack(p, init, spec.layers, h,
                          h * static_cast<int>(spec.extra("ffn_mult", 2)));
      break;
    }
    case Arch::LPATCHTST: {
      const int hd = static_cast<int>(spec.extra("denoiser_dim", 8));
      add_lstm(p, init, "den_", 1, hd, true);
      p.add("pemb_w", init.weight(spec.patch_len * hd, h));
      p.add("pemb_b", init.zeros(1, h));
      p.add("pos", init.uniform(patch_count(spec.seq_len, spec.patch_len, spec.stride), h, 0.1));
      add_attention_stack(p, init, spec.layers, h,
                          h * static_cast<int>(spec.extra("ffn_mult", 2)));
      break;
    }
    case Arch::PSLSTM: {
      p.add("pemb_w", init.weight(spec.patch_len, h));
      p.add("pemb_b", init.zeros(1, h));
      for (int l = 0; l < spec.layers; ++l)
        add_slstm(p, init, "slstm" + std::to_string(l) + "_", h, h);
      break;
    }
    case Arch::MAMBA2:
    case Arch::VSN_MAMBA2: {
      const bool vsn = spec.arch == Arch::VSN_MAMBA2;
      if (vsn) add_vsn(p, init, "vsn_", cin, h);
      p.add("semb_w", init.weight(vsn ? h : cin, h));
      p.add("semb_b", init.zeros(1, h));
      for (int l = 0; l < spec.layers; ++l) {
        const std::string s = "ssm" + std::to_string(l) + "_";
        p.add(s + "ln_g", MatrixXd::Ones(1, h));
        p.add(s + "ln_b", init.zeros(1, h));
        p.add(s + "B", init.weight(h, spec.ssm_state).transpose().eval());  // [N_s x H]
        p.add(s + "C", init.weight(spec.ssm_state, h));                     // [N_s x H]
        p.add(s + "wz", init.weight(h, h));
        p.add(s + "bz", init.zeros(1, h));
        p.add(s + "wo", init.weight(h, h));
        p.add(s + "bo", init.zeros(1, h));
      }
      break;
    }
  }

  p.add("head_w", init.weight(head_dim(spec), 1));
  p.add("head_b", init.zeros(1, 1));
  return p;
}

// --- checkpoint io -----------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'S', 'B', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelSpec& spec, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  const std::string canon = spec.canonical();
  write_pod(os, fnv1a(canon));
  write_pod(os, static_cast<std::uint32_t>(canon.size()));
  os.write(canon.data(), static_cast<std::streamsize>(canon.size()));
  write_pod(os, static_cast<std::uint32_t>(params.names.size()));
  for (size_t i = 0; i < params.names.size(); ++i) {
    write_pod(os, static_cast<std::uint32_t>(params.names[i].size()));
    os.write(params.names[i].data(), static_cast<std::streamsize>(params.names[i].size()));
    const MatrixXd& m = params.values[i];
    write_pod(os, static_cast<std::uint64_t>(m.rows()));
    write_pod(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
}

std::pair<ModelSpec, ParamSet> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("bad checkpoint magic");
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != kVersion) throw ValidationError("unsupported checkpoint version");
  std::uint64_t fp = 0;
  read_pod(is, fp);
  std::uint32_t canon_len = 0;
  read_pod(is, canon_len);
  std::string canon(canon_len, '\0');
  is.read(canon.data(), canon_len);
  if (fnv1a(canon) != fp) throw ValidationError("checkpoint fingerprint mismatch");
  ModelSpec spec = spec_from_canonical(canon);
  std::uint32_t n = 0;
  read_pod(is, n);
  ParamSet params;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint64_t rows = 0, cols = 0;
    read_pod(is, rows);
    read_pod(is, cols);
    MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    params.add(name, std::move(m));
  }
  if (!is) throw ValidationError("truncated checkpoint: " + path);
  return {spec, params};
}

// --- HiPPO -------------------------------------------------------------------

MatrixXd hippo_legs_matrix(int n) {
  if (n < 1) throw ConfigError("hippo: state size must be >= 1");
  MatrixXd a = MatrixXd::Zero(n, n);
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      if (row > col)
        a(row, col) = -std::sqrt(2.0 * row + 1.0) * std::sqrt(2.0 * col + 1.0);
      else if (row == col)
        a(row, col) = -(row + 1.0);
    }
  }
  return a;
}

void discretize_hippo(int n, double delta, MatrixXd& a_bar, MatrixXd& input_map) {
  const MatrixXd a = hippo_legs_matrix(n);
  a_bar = (delta * a).exp();
  // A is lower-triangular with strictly negative diagonal, hence invertible
  input_map = a.partialPivLu().solve(a_bar - MatrixXd::Identity(n, n));
}

// --- forward -----------------------------------------------------------------

Var BoundParams::operator[](const std::string& name) const {
  const int i = src->index(name);
  if (i < 0) throw ConfigError("missing parameter array: " + name);
  return vars[static_cast<size_t>(i)];
}

BoundParams bind_params(Tape& t, const ParamSet& p) {
  BoundParams b;
  b.src = &p;
  b.vars.reserve(p.values.size());
  for (const auto& m : p.values) b.vars.push_back(t.param(m));
  return b;
}

Var projection_head(Tape& t, Var h, Var w, Var b) {
  return t.tanh_(t.add_scalar_var(t.matmul(h, w), b));
}

VectorXd embed_ticker(const ModelSpec& spec, const ParamSet& p, int ticker_id) {
  if (spec.embed_dim == 0) return VectorXd(0);
  if (ticker_id < 0 || ticker_id >= spec.n_tickers)
    throw std::out_of_range("ticker id " + std::to_string(ticker_id) + " out of range [0," +
                            std::to_string(spec.n_tickers) + ")");
  return p.at("embed_table").row(ticker_id).transpose();
}

namespace {

std::vector<Var> attach_embedding(Tape& t, const ModelSpec& spec, const BoundParams& p,
                                  const std::vector<Var>& x_steps,
                                  const std::vector<int>& ticker_ids) {
  if (spec.embed_dim == 0) return x_steps;
  Var emb = t.gather_rows(p["embed_table"], ticker_ids);
  std::vector<Var> out;
  out.reserve(x_steps.size());
  for (Var x : x_steps) out.push_back(t.concat_cols({x, emb}));
  return out;
}

Var affine(Tape& t, Var x, Var w, Var b) { return t.add_rowvec(t.matmul(x, w), b); }

}  // namespace

namespace detail {

// one LSTM layer over the whole sequence
// f,i,o = sigmoid(W x + U h + b), c = f.c + i.tanh(Wc x), h = o.tanh(c)
std::vector<Var> lstm_layer(Tape& t, const BoundParams& p, const std::string& pre,
                            const std::vector<Var>& xs, int hdim) {
  const Eigen::Index B = t.val(xs[0]).rows();
  Var h = t.constant(MatrixXd::Zero(B, hdim));
  Var c = t.constant(MatrixXd::Zero(B, hdim));
  Var wf = p[pre + "wf"], wi = p[pre + "wi"], wo = p[pre + "wo"], wc = p[pre + "wc"];
  Var uf = p[pre + "uf"], ui = p[pre + "ui"], uo = p[pre + "uo"];
  Var bf = p[pre + "bf"], bi = p[pre + "bi"], bo = p[pre + "bo"];
  std::vector<Var> out;
  out.reserve(xs.size());
  for (Var x : xs) {
    Var f = t.sigmoid(t.add_rowvec(t.add(t.matmul(x, wf), t.matmul(h, uf)), bf));
    Var i = t.sigmoid(t.add_rowvec(t.add(t.matmul(x, wi), t.matmul(h, ui)), bi));
    Var o = t.sigmoid(t.add_rowvec(t.add(t.matmul(x, wo), t.matmul(h, uo)), bo));
    Var cand = t.tanh_(t.matmul(x, wc));
    c = t.add(t.mul(f, c), t.mul(i, cand));
    h = t.mul(o, t.tanh_(c));
    out.push_back(h);
  }
  return out;
}

// sLSTM with exponential gating and log-domain stabilizer m (detached):
//   m_t = max(ftil + m_{t-1}, itil); f' = exp(ftil + m_{t-1} - m_t); i' = exp(itil - m_t)
//   c = f'.c + i'.tanh(z); n = f'.n + i'; h = o . c/n
std::vector<Var> slstm_layer(Tape& t, const BoundParams& p, const std::string& pre,
                             const std::vector<Var>& xs, int hdim, RecurrentTrace* trace) {
  const Eigen::Index B = t.val(xs[0]).rows();
  Var h = t.constant(MatrixXd::Zero(B, hdim));
  Var c = t.constant(MatrixXd::Zero(B, hdim));
  Var n = t.constant(MatrixXd::Zero(B, hdim));
  MatrixXd m_prev = MatrixXd::Zero(B, hdim);
  Var wz = p[pre + "wz"], wf = p[pre + "wf"], wi = p[pre + "wi"], wo = p[pre + "wo"];
  Var rz = p[pre + "rz"], rf = p[pre + "rf"], ri = p[pre + "ri"], ro = p[pre + "ro"];
  Var bz = p[pre + "bz"], bf = p[pre + "bf"], bi = p[pre + "bi"], bo = p[pre + "bo"];
  std::vector<Var> out;
  out.reserve(xs.size());
  for (Var x : xs) {
    Var z = t.tanh_(t.add_rowvec(t.add(t.matmul(x, wz), t.matmul(h, rz)), bz));
    Var ftil = t.add_rowvec(t.add(t.matmul(x, wf), t.matmul(h, rf)), bf);
    Var itil = t.add_rowvec(t.add(t.matmul(x, wi), t.matmul(h, ri)), bi);
    Var o = t.sigmoid(t.add_rowvec(t.add(t.matmul(x, wo), t.matmul(h, ro)), bo));
    MatrixXd m_new = (t.val(ftil) + m_prev).cwiseMax(t.val(itil));
    Var fprime = t.exp_(t.add_mat(ftil, m_prev - m_new));
    Var iprime = t.exp_(t.add_mat(itil, -m_new));
    c = t.add(t.mul(fprime, c), t.mul(iprime, z));
    n = t.add(t.mul(fprime, n), iprime);
    h = t.mul(o, t.div(c, n));
    out.push_back(h);
    if (trace) {
      trace->cell.push_back(t.val(c));
      trace->norm.push_back(t.val(n));
      trace->z_tanh.push_back(t.val(z));
      trace->gate_o.push_back(t.val(o));
      trace->stab.push_back(m_new);
    }
    m_prev = std::move(m_new);
  }
  return out;
}

// mLSTM: matrix memory via gated outer products, scalar exp gates, query
// retrieval normalized by max(|n.q|, 1). Unlike sLSTM, the retrieval is not
// invariant to the stabilizer (the 1 lives in the stabilized domain), so m
// stays on the tape and is differentiated through.
std::vector<Var> mlstm_layer(Tape& t, const BoundParams& p, const std::string& pre,
                             const std::vector<Var>& xs, int d, RecurrentTrace* trace) {
  const Eigen::Index B = t.val(xs[0]).rows();
  Var cflat = t.constant(MatrixXd::Zero(B, static_cast<Eigen::Index>(d) * d));
  Var nvec = t.constant(MatrixXd::Zero(B, d));
  Var m_prev = t.constant(MatrixXd::Zero(B, 1));
  Var wq = p[pre + "wq"], wk = p[pre + "wk"], wv = p[pre + "wv"];
  Var bq = p[pre + "bq"], bk = p[pre + "bk"], bv = p[pre + "bv"];
  Var wfg = p[pre + "wfg"], bfg = p[pre + "bfg"], wig = p[pre + "wig"], big = p[pre + "big"];
  Var wog = p[pre + "wog"], bog = p[pre + "bog"];
  const double kscale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> out;
  out.reserve(xs.size());
  for (Var x : xs) {
    Var q = affine(t, x, wq, bq);
    Var k = t.scale(affine(t, x, wk, bk), kscale);
    Var v = affine(t, x, wv, bv);
    Var ftil = affine(t, x, wfg, bfg);  // [B x 1]
    Var itil = affine(t, x, wig, big);
    Var o = t.sigmoid(affine(t, x, wog, bog));
    Var m_new = t.cwise_max(t.add(ftil, m_prev), itil);
    Var fprime = t.exp_(t.sub(t.add(ftil, m_prev), m_new));
    Var iprime = t.exp_(t.sub(itil, m_new));
    cflat = t.add(t.mul_colvec(cflat, fprime), t.mul_colvec(t.outer_flat(v, k), iprime));
    nvec = t.add(t.mul_colvec(nvec, fprime), t.mul_colvec(k, iprime));
    Var denom = t.max_scalar(t.abs_(t.rowsum(t.mul(nvec, q))), 1.0);
    Var htil = t.div_colvec(t.matvec_flat(cflat, q, d), denom);
    out.push_back(t.mul(o, htil));
    if (trace) {
      trace->cell.push_back(t.val(cflat));
      trace->norm.push_back(t.val(nvec));
      trace->gate_o.push_back(t.val(o));
      trace->stab.push_back(t.val(m_new));
    }
    m_prev = m_new;
  }
  return out;
}

}  // namespace detail

VsnOut vsn_forward(Tape& t, const BoundParams& p, const std::string& prefix, Var x_t,
                   int n_vars, int hidden) {
  Var w1 = p[prefix + "emb_w1"], b1 = p[prefix + "emb_b1"];
  Var w2 = p[prefix + "emb_w2"], b2 = p[prefix + "emb_b2"];
  std::vector<Var> embs;
  embs.reserve(n_vars);
  for (int i = 0; i < n_vars; ++i) {
    Var xi = t.slice_cols(x_t, i, 1);
    Var h1 = t.tanh_(t.add_rowvec(t.matmul(xi, t.slice_rows(w1, i, 1)), t.slice_rows(b1, i, 1)));
    Var ei = t.add_rowvec(t.matmul(h1, t.slice_rows(w2, i * hidden, hidden)),
                          t.slice_rows(b2, i, 1));
    embs.push_back(ei);
  }
  Var flat = t.concat_cols(embs);
  Var alpha = t.softmax_rows(affine(t, flat, p[prefix + "gate_w"], p[prefix + "gate_b"]));
  Var sel;
  for (int i = 0; i < n_vars; ++i) {
    Var term = t.mul_colvec(embs[static_cast<size_t>(i)], t.slice_cols(alpha, i, 1));
    sel = i == 0 ? term : t.add(sel, term);
  }
  return {sel, alpha};
}

namespace {

std::vector<Var> vsn_sequence(Tape& t, const BoundParams& p, const std::vector<Var>& xs,
                              int n_vars, int hidden) {
  std::vector<Var> out;
  out.reserve(xs.size());
  for (Var x : xs) out.push_back(vsn_forward(t, p, "vsn_", x, n_vars, hidden).selected);
  return out;
}

// per-channel time series: [B x L] matrices, one per input channel
std::vector<Var> channel_series(Tape& t, const std::vector<Var>& xs, int n_channels) {
  std::vector<Var> series;
  series.reserve(n_channels);
  for (int c = 0; c < n_channels; ++c) {
    std::vector<Var> cols;
    cols.reserve(xs.size());
    for (Var x : xs) cols.push_back(t.slice_cols(x, c, 1));
    series.push_back(t.concat_cols(cols));
  }
  return series;
}

MatrixXd lower_tri_mask(int n) {
  MatrixXd m = MatrixXd::Zero(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) m(r, c) = 1.0;
  return m;
}

// causal moving-average operator: row t averages the trailing min(K, t+1) points
MatrixXd causal_ma_matrix(int n, int kernel) {
  MatrixXd m = MatrixXd::Zero(n, n);
  for (int r = 0; r < n; ++r) {
    const int w = std::min(kernel, r + 1);
    for (int c = r - w + 1; c <= r; ++c) m(r, c) = 1.0 / w;
  }
  return m;
}

// xs -> per-timestep feature maps [B x C] for the linear window models
std::vector<Var> nlinear_backbone(Tape& t, const BoundParams& p, const std::vector<Var>& xs,
                                  int n_channels) {
  const int L = static_cast<int>(xs.size());
  Var wm = t.mul_mat(p["lin_w"], lower_tri_mask(L));
  Var wmT = t.transpose(wm);
  Var rowsums = t.transpose(t.matmul(wm, t.constant(MatrixXd::Ones(L, 1))));  // [1 x L]
  auto series = channel_series(t, xs, n_channels);
  std::vector<Var> ys;
  ys.reserve(series.size());
  for (Var s : series) {
    // y_t = sum_{u<=t} W_{t,u} (x_u - x_t) + x_t + b_t
    Var base = t.matmul(s, wmT);
    Var centered = t.sub(base, t.mul_rowvec(s, rowsums));
    ys.push_back(t.add_rowvec(t.add(centered, s), p["lin_b"]));
  }
  std::vector<Var> steps;
  steps.reserve(L);
  for (int step = 0; step < L; ++step) {
    std::vector<Var> cols;
    cols.reserve(ys.size());
    for (Var y : ys) cols.push_back(t.slice_cols(y, step, 1));
    steps.push_back(t.concat_cols(cols));
  }
  return steps;
}

std::vector<Var> dlinear_backbone(Tape& t, const ModelSpec& spec, const BoundParams& p,
                                  const std::vector<Var>& xs, int n_channels) {
  const int L = static_cast<int>(xs.size());
  const int kernel = static_cast<int>(spec.extra("dlinear_kernel", 25));
  Var ma = t.constant(causal_ma_matrix(L, kernel).transpose());
  Var wtT = t.transpose(t.mul_mat(p["trend_w"], lower_tri_mask(L)));
  Var wrT = t.transpose(t.mul_mat(p["resid_w"], lower_tri_mask(L)));
  auto series = channel_series(t, xs, n_channels);
  std::vector<Var> ys;
  ys.reserve(series.size());
  for (Var s : series) {
    Var trend = t.matmul(s, ma);
    Var resid = t.sub(s, trend);
    Var mapped = t.add(t.matmul(trend, wtT), t.matmul(resid, wrT));
    ys.push_back(t.add_rowvec(mapped, p["lin_b"]));
  }
  std::vector<Var> steps;
  steps.reserve(L);
  for (int step = 0; step < L; ++step) {
    std::vector<Var> cols;
    cols.reserve(ys.size());
    for (Var y : ys) cols.push_back(t.slice_cols(y, step, 1));
    steps.push_back(t.concat_cols(cols));
  }
  return steps;
}

std::vector<Var> ar1x_backbone(Tape& t, const ModelSpec& spec, const BoundParams& p,
                               const std::vector<Var>& xs) {
  const int lags = static_cast<int>(spec.extra("p", 1));
  Var phi = p["ar_phi"];
  std::vector<Var> steps;
  for (int step = lags - 1; step < static_cast<int>(xs.size()); ++step) {
    Var acc;
    for (int j = 0; j < lags; ++j) {
      Var term = t.mul_rowvec(xs[static_cast<size_t>(step - j)], t.slice_rows(phi, j, 1));
      acc = j == 0 ? term : t.add(acc, term);
    }
    steps.push_back(acc);
  }
  return steps;
}

}  // namespace

namespace detail {

// causal multi-head self-attention + FFN over per-patch tokens (pre-norm);
// tokens[p] is [B*C x H], attention mixes only across the patch index
void attention_stack(Tape& t, const ModelSpec& spec, const BoundParams& p,
                     std::vector<Var>& tokens) {
  const int H = spec.hidden_dim, M = spec.heads, dh = H / M;
  const int N = static_cast<int>(tokens.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < spec.layers; ++l) {
    const std::string a = "attn" + std::to_string(l) + "_";
    const std::string ln = "ln" + std::to_string(l);
    std::vector<Var> q(N), k(N), v(N);
    for (int i = 0; i < N; ++i) {
      Var normed = ad::layer_norm(t, tokens[static_cast<size_t>(i)], p[ln + "a_g"], p[ln + "a_b"]);
      q[i] = affine(t, normed, p[a + "wq"], p[a + "bq"]);
      k[i] = affine(t, normed, p[a + "wk"], p[a + "bk"]);
      v[i] = affine(t, normed, p[a + "wv"], p[a + "bv"]);
    }
    for (int i = N - 1; i >= 0; --i) {
      std::vector<Var> head_outs;
      for (int m = 0; m < M; ++m) {
        Var qm = t.slice_cols(q[i], m * dh, dh);
        std::vector<Var> scores;
        scores.reserve(i + 1);
        for (int j = 0; j <= i; ++j) {
          Var km = t.slice_cols(k[j], m * dh, dh);
          scores.push_back(t.scale(t.rowsum(t.mul(qm, km)), scale));
        }
        Var alpha = t.softmax_rows(scores.size() == 1 ? scores[0] : t.concat_cols(scores));
        Var ctx;
        for (int j = 0; j <= i; ++j) {
          Var vm = t.slice_cols(v[j], m * dh, dh);
          Var term = t.mul_colvec(vm, t.slice_cols(alpha, j, 1));
          ctx = j == 0 ? term : t.add(ctx, term);
        }
        head_outs.push_back(ctx);
      }
      Var merged = head_outs.size() == 1 ? head_outs[0] : t.concat_cols(head_outs);
      Var attn = affine(t, merged, p[a + "wo"], p[a + "bo"]);
      tokens[static_cast<size_t>(i)] = t.add(tokens[static_cast<size_t>(i)], attn);
    }
    const std::string f = "ffn" + std::to_string(l) + "_";
    for (int i = 0; i < N; ++i) {
      Var normed = ad::layer_norm(t, tokens[static_cast<size_t>(i)], p[ln + "b_g"], p[ln + "b_b"]);
      Var hidden = t.tanh_(affine(t, normed, p[f + "w1"], p[f + "b1"]));
      tokens[static_cast<size_t>(i)] = t.add(tokens[static_cast<size_t>(i)],
                                             affine(t, hidden, p[f + "w2"], p[f + "b2"]));
    }
  }
}

}  // namespace detail

namespace {

// regroup a channel-stacked [B*C x H] token into [B x C*H] for the head
Var regroup_channels(Tape& t, Var token, int n_channels, Eigen::Index batch) {
  std::vector<Var> parts;
  parts.reserve(n_channels);
  for (int c = 0; c < n_channels; ++c)
    parts.push_back(t.slice_rows(token, static_cast<int>(c * batch), static_cast<int>(batch)));
  return parts.size() == 1 ? parts[0] : t.concat_cols(parts);
}

std::vector<Var> mamba_backbone(Tape& t, const ModelSpec& spec, const BoundParams& p,
                                const std::vector<Var>& xs) {
  const int ns = spec.ssm_state;
  const Eigen::Index B = t.val(xs[0]).rows();
  const double delta = spec.extra("delta", 0.2);  // Delta_max/2 with Delta_max = 0.4
  MatrixXd a_bar, input_map;
  discretize_hippo(ns, delta, a_bar, input_map);
  Var a_bar_T = t.constant(a_bar.transpose());
  Var imap = t.constant(input_map);

  std::vector<Var> cur;
  cur.reserve(xs.size());
  for (Var x : xs) cur.push_back(affine(t, x, p["semb_w"], p["semb_b"]));

  for (int l = 0; l < spec.layers; ++l) {
    const std::string s = "ssm" + std::to_string(l) + "_";
    Var bbar_T = t.transpose(t.matmul(imap, p[s + "B"]));  // [H x N_s]
    Var cmat = p[s + "C"];                                 // [N_s x H]
    Var h = t.constant(MatrixXd::Zero(B, ns));
    std::vector<Var> next;
    next.reserve(cur.size());
    for (Var x : cur) {
      Var xin = ad::layer_norm(t, x, p[s + "ln_g"], p[s + "ln_b"]);
      h = t.add(t.matmul(h, a_bar_T), t.matmul(xin, bbar_T));
      Var y = t.matmul(h, cmat);
      Var gate = t.sigmoid(affine(t, xin, p[s + "wz"], p[s + "bz"]));
      Var outp = affine(t, t.mul(y, gate), p[s + "wo"], p[s + "bo"]);
      next.push_back(t.add(x, outp));
    }
    cur = std::move(next);
  }
  return cur;
}

std::vector<Var> xlstm_backbone(Tape& t, const ModelSpec& spec, const BoundParams& p,
                                const std::vector<Var>& xs) {
  const int H = spec.hidden_dim;
  if (spec.layers == 1) return detail::slstm_layer(t, p, "slstm0_", xs, H);
  std::vector<Var> cur;
  cur.reserve(xs.size());
  for (Var x : xs) cur.push_back(affine(t, x, p["xemb_w"], p["xemb_b"]));
  for (int l = 0; l < spec.layers; ++l) {
    const std::string ln = "xln" + std::to_string(l);
    std::vector<Var> normed;
    normed.reserve(cur.size());
    for (Var x : cur) normed.push_back(ad::layer_norm(t, x, p[ln + "_g"], p[ln + "_b"]));
    std::vector<Var> cell =
        l % 2 == 0 ? detail::slstm_layer(t, p, "slstm" + std::to_string(l) + "_", normed, H)
                   : detail::mlstm_layer(t, p, "mlstm" + std::to_string(l) + "_", normed, H);
    for (size_t i = 0; i < cur.size(); ++i) cur[i] = t.add(cur[i], cell[i]);
  }
  return cur;
}

}  // namespace

ForwardResult model_forward(Tape& t, const ModelSpec& spec, const BoundParams& p,
                            const std::vector<Var>& x_steps, const std::vector<int>& ticker_ids,
                            double dropout_p, std::mt19937_64* dropout_rng) {
  spec.validate();
  if (static_cast<int>(x_steps.size()) != spec.seq_len)
    throw ConfigError("model_forward: window length " + std::to_string(x_steps.size()) +
                      " != seq_len " + std::to_string(spec.seq_len));
  for (int id : ticker_ids)
    if (id < 0 || id >= spec.n_tickers) throw std::out_of_range("ticker id out of range");
  if (dropout_p > 0 && dropout_rng == nullptr)
    throw ConfigError("model_forward: dropout requires an rng");

  const int cin = spec.n_features + spec.embed_dim;
  const int L = spec.seq_len;
  const Eigen::Index B = t.val(x_steps[0]).rows();
  auto xs = attach_embedding(t, spec, p, x_steps, ticker_ids);

  // backbone -> per-emitted-step representation for the head
  std::vector<Var> reps;      // one per emitted window position
  int first_step = arch_burn_in(spec);

  switch (spec.arch) {
    case Arch::AR1X:
      reps = ar1x_backbone(t, spec, p, xs);
      break;
    case Arch::NLINEAR:
      reps = nlinear_backbone(t, p, xs, cin);
      break;
    case Arch::DLINEAR:
      reps = dlinear_backbone(t, spec, p, xs, cin);
      break;
    case Arch::LSTM: {
      std::vector<Var> cur = xs;
      for (int l = 0; l < spec.layers; ++l)
        cur = detail::lstm_layer(t, p, "lstm" + std::to_string(l) + "_", cur, spec.hidden_dim);
      reps = std::move(cur);
      break;
    }
    case Arch::VLSTM: {
      std::vector<Var> cur = vsn_sequence(t, p, xs, cin, spec.hidden_dim);
      for (int l = 0; l < spec.layers; ++l)
        cur = detail::lstm_layer(t, p, "lstm" + std::to_string(l) + "_", cur, spec.hidden_dim);
      reps = std::move(cur);
      break;
    }
    case Arch::XLSTM:
      reps = xlstm_backbone(t, spec, p, xs);
      break;
    case Arch::VXLSTM: {
      std::vector<Var> sel = vsn_sequence(t, p, xs, cin, spec.hidden_dim);
      reps = xlstm_backbone(t, spec, p, sel);
      break;
    }
    case Arch::MAMBA2:
      reps = mamba_backbone(t, spec, p, xs);
      break;
    case Arch::VSN_MAMBA2: {
      std::vector<Var> sel = vsn_sequence(t, p, xs, cin, spec.hidden_dim);
      reps = mamba_backbone(t, spec, p, sel);
      break;
    }
    case Arch::PATCHTST:
    case Arch::LPATCHTST:
    case Arch::PSLSTM: {
      const int P = spec.patch_len, S = spec.stride;
      const int N = patch_count(L, P, S);
      std::vector<Var> tokens(static_cast<size_t>(N));
      if (spec.arch == Arch::LPATCHTST) {
        // channel-wise LSTM denoiser on scalar series, stacked across channels
        const int hd = static_cast<int>(spec.extra("denoiser_dim", 8));
        std::vector<Var> den_in;
        den_in.reserve(xs.size());
        for (Var x : xs) {
          std::vector<Var> per_channel;
          per_channel.reserve(cin);
          for (int c = 0; c < cin; ++c) per_channel.push_back(t.slice_cols(x, c, 1));
          den_in.push_back(t.concat_rows(per_channel));  // [B*C x 1]
        }
        auto hidden = detail::lstm_layer(t, p, "den_", den_in, hd);
        for (int pi = 0; pi < N; ++pi) {
          std::vector<Var> span(hidden.begin() + pi * S, hidden.begin() + pi * S + P);
          Var raw = t.concat_cols(span);  // [B*C x P*hd]
          tokens[static_cast<size_t>(pi)] = affine(t, raw, p["pemb_w"], p["pemb_b"]);
        }
      } else {
        auto series = channel_series(t, xs, cin);
        Var stacked = t.concat_rows(series);  // [B*C x L]
        for (int pi = 0; pi < N; ++pi) {
          Var raw = t.slice_cols(stacked, pi * S, P);
          tokens[static_cast<size_t>(pi)] = affine(t, raw, p["pemb_w"], p["pemb_b"]);
        }
      }
      if (spec.arch == Arch::PSLSTM) {
        std::vector<Var> cur = tokens;
        for (int l = 0; l < spec.layers; ++l)
          cur = detail::slstm_layer(t, p, "slstm" + std::to_string(l) + "_", cur, spec.hidden_dim);
        tokens = std::move(cur);
      } else {
        Var pos = p["pos"];
        for (int pi = 0; pi < N; ++pi)
          tokens[static_cast<size_t>(pi)] =
              t.add_rowvec(tokens[static_cast<size_t>(pi)], t.slice_rows(pos, pi, 1));
        detail::attention_stack(t, spec, p, tokens);
      }
      // per-timestep representation: latest completed patch, held between ends
      std::vector<Var> grouped(static_cast<size_t>(N));
      for (int pi = 0; pi < N; ++pi)
        grouped[static_cast<size_t>(pi)] = regroup_channels(t, tokens[static_cast<size_t>(pi)], cin, B);
      reps.reserve(L - first_step);
      for (int step = first_step; step < L; ++step) {
        int pi = (step - (P - 1)) / S;
        if (pi >= N) pi = N - 1;
        // patch pi ends at pi*S + P - 1; ensure it has completed by `step`
        while (pi > 0 && pi * S + P - 1 > step) --pi;
        reps.push_back(grouped[static_cast<size_t>(pi)]);
      }
      break;
    }
  }

  ForwardResult res;
  res.first_step = first_step;
  Var hw = p["head_w"], hb = p["head_b"];
  res.signals.reserve(reps.size());
  for (Var r : reps) {
    Var rep = dropout_p > 0 ? ad::dropout(t, r, dropout_p, *dropout_rng) : r;
    res.signals.push_back(projection_head(t, rep, hw, hb));
  }
  return res;
}

}  // namespace sbench::models
