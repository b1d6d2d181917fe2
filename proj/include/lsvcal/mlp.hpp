#pragma once

// Small feed-forward networks: x -> w_M ∘ phi∘w_{M-1} ∘ ... ∘ phi∘w_1 (x),
// affine output layer. Parameters live in one flat vector (row-major A_m,
// then b_m, per layer) so optimizer state and save/load stay trivial.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsvcal/common.hpp"
#include "lsvcal/tape.hpp"

namespace lsvcal {

struct Activation {
    enum Kind { LeakyRelu, Tanh } kind = LeakyRelu;
    double slope = 0.2;  // LeakyRelu only

    double operator()(double x) const {
        return kind == Tanh ? std::tanh(x) : (x >= 0.0 ? x : slope * x);
    }
    /// Derivative recovered from the post-activation value.
    double deriv_from_value(double y) const {
        return kind == Tanh ? 1.0 - y * y : (y >= 0.0 ? 1.0 : slope);
    }
};

struct MlpSpec {
    int input_dim = 1;
    std::vector<int> hidden;
    int output_dim = 1;
    std::vector<Activation> activations;  // one per hidden layer

    int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
    int layer_in(int m) const { return m == 0 ? input_dim : hidden[m - 1]; }
    int layer_out(int m) const {
        return m == num_layers() - 1 ? output_dim : hidden[m];
    }
    std::size_t param_count() const;
    void validate() const;
};

/// The architecture used for leverage networks: (layers-1) leaky-ReLU(0.2)
/// hidden layers followed by one tanh hidden layer, affine output.
MlpSpec leverage_net_spec(int width = 64, int hidden_layers = 4);

struct MlpParams {
    MlpSpec spec;
    std::vector<double> data;

    std::size_t w_off(int m) const;
    std::size_t b_off(int m) const { return w_off(m) + static_cast<std::size_t>(spec.layer_out(m)) * spec.layer_in(m); }
    const double* w(int m) const { return data.data() + w_off(m); }
    const double* b(int m) const { return data.data() + b_off(m); }
};

/// Fan-in scaled uniform weights, zero biases; the output layer is further
/// scaled by output_scale so the net starts near zero (L starts near 1).
MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed, double output_scale = 0.01);

/// Scratch buffers reused across evaluations (one per worker).
struct MlpWork {
    std::vector<double> act;    // concatenated post-activations, layers 0..M-1
    std::vector<double> delta;  // backward buffer
};

void mlp_eval(const MlpParams& p, std::span<const double> x, std::span<double> y,
              MlpWork& work);
double mlp_eval1(const MlpParams& p, double x);

/// Accumulates sum over outputs of out_coef[j] * dF_j/dtheta into grad_accum
/// (length param_count) and optionally the input gradient into x_grad.
/// Runs its own forward pass; values match mlp_eval bitwise.
void mlp_backprop(const MlpParams& p, std::span<const double> x,
                  std::span<const double> out_coef, double* grad_accum,
                  double* x_grad, MlpWork& work);

/// Batched kernels used by the Monte Carlo loops: one network evaluated at
/// nb inputs per call, unit-major layout (x[k*nb + b], y[j*nb + b]).
struct MlpBatchWork {
    std::vector<double> act;  // activations of input + hidden layers
    std::vector<double> cur, nxt;
};

/// Forward pass for nb inputs; activations stay in `work` for a following
/// mlp_backward_batch call.
void mlp_forward_batch(const MlpParams& p, const double* x, int nb, double* y,
                       MlpBatchWork& work);

/// Backward pass over the activations stored by the last forward.
/// Adds sum_b coef[j,b] * dF_j/dtheta(x_b) into grad_accum (if non-null) and
/// the per-input gradients into x_grad (if non-null).
void mlp_backward_batch(const MlpParams& p, int nb, const double* out_coef,
                        double* grad_accum, double* x_grad, MlpBatchWork& work);

std::vector<Tape::Id> make_param_leaves(Tape& tape, const MlpParams& p);
/// fused=true records one affine primitive per layer; fused=false the
/// equivalent scalar mul/add chain. Both must yield identical gradients.
std::vector<Tape::Id> mlp_eval_taped(Tape& tape, const MlpSpec& spec,
                                     std::span<const Tape::Id> params,
                                     std::span<const Tape::Id> x, bool fused = true);

/// prefix.bin: flat little-endian float64 array; prefix.json: the MlpSpec.
void save_mlp(const MlpParams& p, const std::string& prefix);
MlpParams load_mlp(const std::string& prefix);

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(AdamState& st, std::span<double> params, std::span<const double> grad,
               double lr);

}  // namespace lsvcal
