#include "lsvcal/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "lsvcal/rng.hpp"
#include "json.hpp"

namespace lsvcal {

std::size_t MlpSpec::param_count() const {
    std::size_t n = 0;
    for (int m = 0; m < num_layers(); ++m)
        n += static_cast<std::size_t>(layer_in(m) + 1) * layer_out(m);
    return n;
}

void MlpSpec::validate() const {
    if (input_dim < 1 || output_dim < 1) throw InvalidInput("mlp: bad io dims");
    if (activations.size() != hidden.size())
        throw InvalidInput("mlp: one activation per hidden layer required");
    for (int h : hidden)
        if (h < 1) throw InvalidInput("mlp: bad hidden width");
    for (const auto& a : activations)
        if (!std::isfinite(a.slope)) throw InvalidInput("mlp: non-finite slope");
}

MlpSpec leverage_net_spec(int width, int hidden_layers) {
    MlpSpec s;
    s.input_dim = 1;
    s.output_dim = 1;
    s.hidden.assign(hidden_layers, width);
    s.activations.assign(hidden_layers, Activation{Activation::LeakyRelu, 0.2});
    s.activations.back() = Activation{Activation::Tanh, 0.0};
    return s;
}

std::size_t MlpParams::w_off(int m) const {
    std::size_t off = 0;
    for (int k = 0; k < m; ++k)
        off += static_cast<std::size_t>(spec.layer_in(k) + 1) * spec.layer_out(k);
    return off;
}

MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed, double output_scale) {
    spec.validate();
    MlpParams p{spec, std::vector<double>(spec.param_count(), 0.0)};
    SeqRng rng(seed);
    for (int m = 0; m < spec.num_layers(); ++m) {
        const double scale = std::sqrt(1.0 / spec.layer_in(m)) *
                             (m == spec.num_layers() - 1 ? output_scale : 1.0);
        double* w = p.data.data() + p.w_off(m);
        const std::size_t nw = static_cast<std::size_t>(spec.layer_in(m)) * spec.layer_out(m);
        for (std::size_t i = 0; i < nw; ++i) w[i] = rng.uniform(-scale, scale);
        // biases stay zero
    }
    return p;
}

namespace {

std::size_t act_buf_size(const MlpSpec& s) {
    std::size_t n = s.input_dim;
    for (int h : s.hidden) n += h;
    return n;
}

/// Forward pass storing post-activations of input and every hidden layer.
/// Returns pointer to the last hidden activation block.
void forward_store(const MlpParams& p, std::span<const double> x, MlpWork& work,
                   std::span<double> y) {
    const MlpSpec& s = p.spec;
    work.act.resize(act_buf_size(s));
    std::memcpy(work.act.data(), x.data(), sizeof(double) * s.input_dim);
    std::size_t in_off = 0;
    for (int m = 0; m < s.num_layers(); ++m) {
        const int ni = s.layer_in(m), no = s.layer_out(m);
        const double* a = p.w(m);
        const double* b = p.b(m);
        const double* in = work.act.data() + in_off;
        const bool last = m == s.num_layers() - 1;
        double* out = last ? y.data() : work.act.data() + in_off + ni;
        for (int j = 0; j < no; ++j) {
            double v = b[j];
            const double* row = a + static_cast<std::size_t>(j) * ni;
            for (int k = 0; k < ni; ++k) v += row[k] * in[k];
            out[j] = last ? v : s.activations[m](v);
        }
        in_off += ni;
    }
}

}  // namespace

void mlp_eval(const MlpParams& p, std::span<const double> x, std::span<double> y,
              MlpWork& work) {
    if (x.size() != static_cast<std::size_t>(p.spec.input_dim) ||
        y.size() != static_cast<std::size_t>(p.spec.output_dim))
        throw InvalidInput("mlp_eval: dimension mismatch");
    forward_store(p, x, work, y);
}

double mlp_eval1(const MlpParams& p, double x) {
    MlpWork work;
    double y;
    mlp_eval(p, {&x, 1}, {&y, 1}, work);
    return y;
}

void mlp_backprop(const MlpParams& p, std::span<const double> x,
                  std::span<const double> out_coef, double* grad_accum,
                  double* x_grad, MlpWork& work) {
    const MlpSpec& s = p.spec;
    if (x.size() != static_cast<std::size_t>(s.input_dim) ||
        out_coef.size() != static_cast<std::size_t>(s.output_dim))
        throw InvalidInput("mlp_backprop: dimension mismatch");
    std::vector<double> y(s.output_dim);
    forward_store(p, x, work, y);

    // delta buffer holds the adjoint of the current layer's input.
    int maxw = std::max(s.input_dim, s.output_dim);
    for (int h : s.hidden) maxw = std::max(maxw, h);
    work.delta.resize(2 * static_cast<std::size_t>(maxw));
    double* cur = work.delta.data();
    double* nxt = work.delta.data() + maxw;
    std::memcpy(cur, out_coef.data(), sizeof(double) * s.output_dim);

    std::size_t in_off = act_buf_size(s);
    for (int m = s.num_layers() - 1; m >= 0; --m) {
        const int ni = s.layer_in(m), no = s.layer_out(m);
        in_off -= ni;
        const double* in = work.act.data() + in_off;
        const double* a = p.w(m);
        double* gw = grad_accum + p.w_off(m);
        double* gb = grad_accum + p.b_off(m);
        for (int k = 0; k < ni; ++k) nxt[k] = 0.0;
        for (int j = 0; j < no; ++j) {
            const double d = cur[j];
            gb[j] += d;
            const double* row = a + static_cast<std::size_t>(j) * ni;
            double* gr = gw + static_cast<std::size_t>(j) * ni;
            for (int k = 0; k < ni; ++k) {
                gr[k] += d * in[k];
                nxt[k] += d * row[k];
            }
        }
        if (m > 0) {
            const Activation& act = s.activations[m - 1];
            for (int k = 0; k < ni; ++k) nxt[k] *= act.deriv_from_value(in[k]);
        }
        std::swap(cur, nxt);
    }
    if (x_grad)
        for (int k = 0; k < s.input_dim; ++k) x_grad[k] += cur[k];
}

void mlp_forward_batch(const MlpParams& p, const double* x, int nb, double* y,
                       MlpBatchWork& work) {
    const MlpSpec& s = p.spec;
    work.act.resize(act_buf_size(s) * static_cast<std::size_t>(nb));
    std::memcpy(work.act.data(), x, sizeof(double) * s.input_dim * nb);
    std::size_t in_off = 0;
    for (int m = 0; m < s.num_layers(); ++m) {
        const int ni = s.layer_in(m), no = s.layer_out(m);
        const double* a = p.w(m);
        const double* bias = p.b(m);
        const double* in = work.act.data() + in_off * nb;
        const bool last = m == s.num_layers() - 1;
        double* out = last ? y : work.act.data() + (in_off + ni) * nb;
        for (int j = 0; j < no; ++j) {
            double* oj = out + static_cast<std::size_t>(j) * nb;
            const double bj = bias[j];
            for (int b = 0; b < nb; ++b) oj[b] = bj;
            const double* row = a + static_cast<std::size_t>(j) * ni;
            for (int k = 0; k < ni; ++k) {
                const double w = row[k];
                const double* ik = in + static_cast<std::size_t>(k) * nb;
                for (int b = 0; b < nb; ++b) oj[b] += w * ik[b];
            }
            if (!last) {
                const Activation& act = s.activations[m];
                if (act.kind == Activation::Tanh) {
                    for (int b = 0; b < nb; ++b) oj[b] = std::tanh(oj[b]);
                } else {
                    const double sl = act.slope;
                    for (int b = 0; b < nb; ++b)
                        oj[b] = oj[b] >= 0.0 ? oj[b] : sl * oj[b];
                }
            }
        }
        in_off += ni;
    }
}

void mlp_backward_batch(const MlpParams& p, int nb, const double* out_coef,
                        double* grad_accum, double* x_grad, MlpBatchWork& work) {
    const MlpSpec& s = p.spec;
    int maxw = std::max(s.input_dim, s.output_dim);
    for (int h : s.hidden) maxw = std::max(maxw, h);
    work.cur.resize(static_cast<std::size_t>(maxw) * nb);
    work.nxt.resize(static_cast<std::size_t>(maxw) * nb);
    double* cur = work.cur.data();
    double* nxt = work.nxt.data();
    std::memcpy(cur, out_coef, sizeof(double) * s.output_dim * nb);

    std::size_t in_off = act_buf_size(s);
    for (int m = s.num_layers() - 1; m >= 0; --m) {
        const int ni = s.layer_in(m), no = s.layer_out(m);
        in_off -= ni;
        const double* in = work.act.data() + in_off * nb;
        const double* a = p.w(m);
        std::fill(nxt, nxt + static_cast<std::size_t>(ni) * nb, 0.0);
        for (int j = 0; j < no; ++j) {
            const double* dj = cur + static_cast<std::size_t>(j) * nb;
            const double* row = a + static_cast<std::size_t>(j) * ni;
            if (grad_accum) {
                double* gw = grad_accum + p.w_off(m) + static_cast<std::size_t>(j) * ni;
                double* gb = grad_accum + p.b_off(m) + j;
                double sb = 0.0;
                for (int b = 0; b < nb; ++b) sb += dj[b];
                *gb += sb;
                for (int k = 0; k < ni; ++k) {
                    const double* ik = in + static_cast<std::size_t>(k) * nb;
                    double sw = 0.0;
                    for (int b = 0; b < nb; ++b) sw += dj[b] * ik[b];
                    gw[k] += sw;
                }
            }
            for (int k = 0; k < ni; ++k) {
                const double w = row[k];
                double* nk = nxt + static_cast<std::size_t>(k) * nb;
                for (int b = 0; b < nb; ++b) nk[b] += w * dj[b];
            }
        }
        if (m > 0) {
            const Activation& act = s.activations[m - 1];
            for (int k = 0; k < ni; ++k) {
                const double* ik = in + static_cast<std::size_t>(k) * nb;
                double* nk = nxt + static_cast<std::size_t>(k) * nb;
                if (act.kind == Activation::Tanh) {
                    for (int b = 0; b < nb; ++b) nk[b] *= 1.0 - ik[b] * ik[b];
                } else {
                    const double sl = act.slope;
                    for (int b = 0; b < nb; ++b) nk[b] *= ik[b] >= 0.0 ? 1.0 : sl;
                }
            }
        }
        std::swap(cur, nxt);
    }
    if (x_grad)
        for (std::size_t i = 0; i < static_cast<std::size_t>(s.input_dim) * nb; ++i)
            x_grad[i] += cur[i];
}

std::vector<Tape::Id> make_param_leaves(Tape& tape, const MlpParams& p) {
    std::vector<Tape::Id> ids(p.data.size());
    for (std::size_t i = 0; i < p.data.size(); ++i) ids[i] = tape.leaf(p.data[i]);
    return ids;
}

std::vector<Tape::Id> mlp_eval_taped(Tape& tape, const MlpSpec& spec,
                                     std::span<const Tape::Id> params,
                                     std::span<const Tape::Id> x, bool fused) {
    spec.validate();
    if (params.size() != spec.param_count() ||
        x.size() != static_cast<std::size_t>(spec.input_dim))
        throw InvalidInput("mlp_eval_taped: dimension mismatch");
    std::vector<Tape::Id> cur(x.begin(), x.end());
    std::size_t off = 0;
    for (int m = 0; m < spec.num_layers(); ++m) {
        const int ni = spec.layer_in(m), no = spec.layer_out(m);
        std::span<const Tape::Id> a = params.subspan(off, static_cast<std::size_t>(ni) * no);
        std::span<const Tape::Id> b = params.subspan(off + a.size(), no);
        off += a.size() + b.size();
        std::vector<Tape::Id> out;
        if (fused) {
            out = tape.affine(a, b, cur);
        } else {
            out.resize(no);
            for (int j = 0; j < no; ++j) {
                Tape::Id v = b[j];
                for (int k = 0; k < ni; ++k)
                    v = tape.add(v, tape.mul(a[static_cast<std::size_t>(j) * ni + k], cur[k]));
                out[j] = v;
            }
        }
        if (m < spec.num_layers() - 1) {
            const Activation& act = spec.activations[m];
            for (auto& id : out)
                id = act.kind == Activation::Tanh ? tape.tanh_(id)
                                                  : tape.leaky_relu(id, act.slope);
        }
        cur = std::move(out);
    }
    return cur;
}

void adam_step(AdamState& st, std::span<double> params, std::span<const double> grad,
               double lr) {
    if (st.m.size() != params.size() || grad.size() != params.size())
        throw InvalidInput("adam_step: shape mismatch");
    st.t += 1;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
    }
}

// --- save/load ------------------------------------------------------------

namespace {

nlohmann::json spec_to_json(const MlpSpec& s) {
    nlohmann::json acts = nlohmann::json::array();
    for (const auto& a : s.activations) {
        if (a.kind == Activation::Tanh)
            acts.push_back({{"kind", "tanh"}});
        else
            acts.push_back({{"kind", "leaky_relu"}, {"slope", a.slope}});
    }
    return {{"input_dim", s.input_dim},
            {"hidden", s.hidden},
            {"output_dim", s.output_dim},
            {"activations", acts}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec s;
    s.input_dim = j.at("input_dim").get<int>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.output_dim = j.at("output_dim").get<int>();
    for (const auto& a : j.at("activations")) {
        if (a.at("kind") == "tanh")
            s.activations.push_back({Activation::Tanh, 0.0});
        else
            s.activations.push_back({Activation::LeakyRelu, a.at("slope").get<double>()});
    }
    s.validate();
    return s;
}

}  // namespace

void save_mlp(const MlpParams& p, const std::string& prefix) {
    {
        std::ofstream js(prefix + ".json");
        if (!js) throw std::runtime_error("cannot write " + prefix + ".json");
        js << spec_to_json(p.spec).dump(2) << "\n";
    }
    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + prefix + ".bin");
    for (double v : p.data) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
        bin.write(reinterpret_cast<const char*>(buf), 8);
    }
}

MlpParams load_mlp(const std::string& prefix) {
    std::ifstream js(prefix + ".json");
    if (!js) throw std::runtime_error("cannot read " + prefix + ".json");
    nlohmann::json j;
    js >> j;
    MlpParams p{spec_from_json(j), {}};
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot read " + prefix + ".bin");
    p.data.resize(p.spec.param_count());
    for (double& v : p.data) {
        unsigned char buf[8];
        bin.read(reinterpret_cast<char*>(buf), 8);
        if (!bin) throw std::runtime_error("truncated " + prefix + ".bin");
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        std::memcpy(&v, &u, 8);
    }
    return p;
}

}  // namespace lsvcal
