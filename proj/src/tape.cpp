#include "lsvcal/tape.hpp"

namespace lsvcal {

std::vector<Tape::Id> Tape::affine(std::span<const Id> a_ids, std::span<const Id> b_ids,
                                   std::span<const Id> x_ids) {
    const std::size_t n_in = x_ids.size();
    const std::size_t n_out = b_ids.size();
    if (a_ids.size() != n_in * n_out)
        throw InvalidInput("affine: weight count mismatch");
    std::vector<Id> out(n_out);
    for (std::size_t j = 0; j < n_out; ++j) {
        double y = val(b_ids[j]);
        const Id* row = a_ids.data() + j * n_in;
        for (std::size_t k = 0; k < n_in; ++k) y += val(row[k]) * val(x_ids[k]);
        const Id aux_off = static_cast<Id>(aux_.size());
        aux_.push_back(static_cast<Id>(n_in));
        aux_.push_back(b_ids[j]);
        aux_.insert(aux_.end(), x_ids.begin(), x_ids.end());
        aux_.insert(aux_.end(), row, row + n_in);
        out[j] = push(Op::Affine, y, aux_off);
    }
    return out;
}

std::vector<double> Tape::backward(Id out) const {
    if (out < 0 || static_cast<std::size_t>(out) >= vals_.size())
        throw InvalidInput("backward: output not on tape");
    std::vector<double> adj(vals_.size(), 0.0);
    adj[static_cast<std::size_t>(out)] = 1.0;
    for (Id i = out; i >= 0; --i) {
        const double g = adj[static_cast<std::size_t>(i)];
        if (g == 0.0) continue;
        switch (ops_[static_cast<std::size_t>(i)]) {
            case Op::Leaf:
            case Op::Stop:
                break;
            case Op::Un:
                adj[static_cast<std::size_t>(pa_[i])] += w0_[i] * g;
                break;
            case Op::Bin:
                adj[static_cast<std::size_t>(pa_[i])] += w0_[i] * g;
                adj[static_cast<std::size_t>(pb_[i])] += w1_[i] * g;
                break;
            case Op::Affine: {
                const Id* aux = aux_.data() + pa_[i];
                const Id n_in = aux[0];
                const Id b = aux[1];
                const Id* x = aux + 2;
                const Id* a = aux + 2 + n_in;
                adj[static_cast<std::size_t>(b)] += g;
                for (Id k = 0; k < n_in; ++k) {
                    adj[static_cast<std::size_t>(x[k])] += val(a[k]) * g;
                    adj[static_cast<std::size_t>(a[k])] += val(x[k]) * g;
                }
                break;
            }
        }
    }
    return adj;
}

}  // namespace lsvcal
