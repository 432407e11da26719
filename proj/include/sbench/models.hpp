#pragma once

// Sequence architectures mapping feature windows to per-timestep bounded
// signals through a shared tanh projection head. Every forward runs on the
// autodiff tape; parameter gradients come from Tape::backward.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "sbench/core.hpp"
#include "sbench/tape.hpp"

namespace sbench::models {

enum class Arch {
  AR1X,
  NLINEAR,
  DLINEAR,
  LSTM,
  VLSTM,
  XLSTM,
  VXLSTM,
  PATCHTST,
  LPATCHTST,
  PSLSTM,
  MAMBA2,
  VSN_MAMBA2,
};

Arch arch_from_string(const std::string& s);
std::string arch_name(Arch a);
const std::vector<Arch>& all_archs();

struct ModelSpec {
  Arch arch = Arch::LSTM;
  int hidden_dim = 8;
  int layers = 1;
  int seq_len = 32;
  double dropout = 0.0;
  int embed_dim = 4;
  int patch_len = 8;
  int stride = 8;
  int heads = 1;
  int ssm_state = 8;
  std::map<std::string, double> extras;

  // bound at build time
  int n_features = 9;
  int n_tickers = 1;

  double extra(const std::string& key, double fallback) const;
  std::string canonical() const;  // stable string, fingerprinted in checkpoints
  void validate() const;
};

struct ParamSet {
  std::vector<std::string> names;
  std::vector<MatrixXd> values;

  void add(const std::string& name, MatrixXd m);
  int index(const std::string& name) const;  // -1 if absent
  const MatrixXd& at(const std::string& name) const;
  MatrixXd& at(const std::string& name);
  size_t total_size() const;
};

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

// checkpoint container: magic, format version, spec fingerprint + canonical
// spec text, named arrays; byte-exact round trip
void save_checkpoint(const std::string& path, const ModelSpec& spec, const ParamSet& params);
std::pair<ModelSpec, ParamSet> load_checkpoint(const std::string& path);
ModelSpec spec_from_canonical(const std::string& text);

// --- forward ----------------------------------------------------------------

// Parameters bound onto a tape for one forward/backward pass.
struct BoundParams {
  const ParamSet* src = nullptr;
  std::vector<ad::Var> vars;
  ad::Var operator[](const std::string& name) const;
};
BoundParams bind_params(ad::Tape& t, const ParamSet& p);

// leading window positions that emit no signal (patch fill, AR lags)
int arch_burn_in(const ModelSpec& spec);

// backbone output width consumed by the projection head
int head_dim(const ModelSpec& spec);

struct ForwardResult {
  std::vector<ad::Var> signals;  // [B x 1] per emitted step
  int first_step = 0;            // window position of signals[0]
};

// x_steps: one [B x n_features] constant per window position; ticker_ids: one
// id per batch row. dropout_rng may be null when dropout == 0.
ForwardResult model_forward(ad::Tape& t, const ModelSpec& spec, const BoundParams& p,
                            const std::vector<ad::Var>& x_steps,
                            const std::vector<int>& ticker_ids, double dropout,
                            std::mt19937_64* dropout_rng);

// plain (tape-backed) helpers exposed for unit tests
ad::Var projection_head(ad::Tape& t, ad::Var h, ad::Var w, ad::Var b);
VectorXd embed_ticker(const ModelSpec& spec, const ParamSet& p, int ticker_id);

struct VsnOut {
  ad::Var selected;  // [B x H]
  ad::Var weights;   // [B x C], rows on the simplex
};
VsnOut vsn_forward(ad::Tape& t, const BoundParams& p, const std::string& prefix,
                   ad::Var x_t, int n_vars, int hidden);

// recurrent cores, exposed for the per-step invariant tests
namespace detail {

struct RecurrentTrace {
  std::vector<MatrixXd> cell;    // c_t (sLSTM) or flattened C_t (mLSTM)
  std::vector<MatrixXd> norm;    // n_t
  std::vector<MatrixXd> z_tanh;  // tanh cell inputs (sLSTM)
  std::vector<MatrixXd> gate_o;  // output gate values
  std::vector<MatrixXd> stab;    // stabilizer m_t
};

std::vector<ad::Var> lstm_layer(ad::Tape& t, const BoundParams& p, const std::string& pre,
                                const std::vector<ad::Var>& xs, int hdim);
std::vector<ad::Var> slstm_layer(ad::Tape& t, const BoundParams& p, const std::string& pre,
                                 const std::vector<ad::Var>& xs, int hdim,
                                 RecurrentTrace* trace = nullptr);
std::vector<ad::Var> mlstm_layer(ad::Tape& t, const BoundParams& p, const std::string& pre,
                                 const std::vector<ad::Var>& xs, int d,
                                 RecurrentTrace* trace = nullptr);

// causal pre-norm multi-head self-attention + FFN over per-patch tokens;
// tokens[p] is [B*C x H], mixing happens only across the patch index
void attention_stack(ad::Tape& t, const ModelSpec& spec, const BoundParams& p,
                     std::vector<ad::Var>& tokens);

}  // namespace detail

// HiPPO-LegS transition matrix (0-indexed n,k):
//   A_nk = -sqrt(2n+1)sqrt(2k+1)  for n > k
//   A_nn = -(n+1)
//   0 otherwise
MatrixXd hippo_legs_matrix(int n);

// zero-order-hold discretization at step delta:
//   A_bar = exp(delta A), input_map = A^{-1} (A_bar - I)
void discretize_hippo(int n, double delta, MatrixXd& a_bar, MatrixXd& input_map);

// patch count for a sequence of length len
inline int patch_count(int len, int patch_len, int stride) {
  return len < patch_len ? 0 : (len - patch_len) / stride + 1;
}

}  // namespace sbench::models
