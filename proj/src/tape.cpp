#include "hrn/tape.hpp"

#include <stdexcept>
#include <string>

#include "hrn/parallel.hpp"

namespace hrn::ad {

std::shared_ptr<const RowMap> RowMap::build(std::vector<int> map, int one_rows) {
    auto rm = std::make_shared<RowMap>();
    rm->one_rows = one_rows;
    rm->offsets.assign(one_rows + 1, 0);
    for (int t : map) {
        if (t < 0 || t >= one_rows) throw std::invalid_argument("RowMap: index out of range");
        rm->offsets[t + 1]++;
    }
    for (int i = 1; i <= one_rows; ++i) rm->offsets[i] += rm->offsets[i - 1];
    rm->list.resize(map.size());
    std::vector<int> cursor(rm->offsets.begin(), rm->offsets.end() - 1);
    for (int i = 0; i < static_cast<int>(map.size()); ++i) rm->list[cursor[map[i]]++] = i;
    rm->map = std::move(map);
    return rm;
}

void matmul_nn(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    const int n = a.rows, k = a.cols, m = b.cols;
    par::parallel_for(n, [&](std::int64_t i) {
        double* crow = c.row(static_cast<int>(i));
        const double* arow = a.row(static_cast<int>(i));
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    });
}

void matmul_nt(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    const int n = a.rows, k = a.cols, m = b.rows;  // c: n x m, b: m x k
    par::parallel_for(n, [&](std::int64_t i) {
        double* crow = c.row(static_cast<int>(i));
        const double* arow = a.row(static_cast<int>(i));
        for (int j = 0; j < m; ++j) {
            const double* brow = b.row(j);
            double acc = crow[j];
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    });
}

void matmul_tn(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    const int n = a.rows, k = a.cols, m = b.cols;  // c: k x m
    par::parallel_for(k, [&](std::int64_t p) {
        double* crow = c.row(static_cast<int>(p));
        for (int i = 0; i < n; ++i) {
            const double av = a.at(i, static_cast<int>(p));
            const double* brow = b.row(i);
            for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    });
}

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

static void check_id(int id, int size, const char* who) {
    if (id < 0 || id >= size) throw std::invalid_argument(std::string(who) + ": bad node id");
}

int Tape::input(Tensor2 v, bool needs_grad) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
}

int Tape::param(const Tensor2* v) {
    if (!v) throw std::invalid_argument("Tape::param: null tensor");
    Node n;
    n.op = Op::Param;
    n.ref = v;
    n.needs_grad = true;
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    check_id(a, size(), "matmul");
    check_id(b, size(), "matmul");
    const Tensor2& av = val_of(nodes_[a]);
    const Tensor2& bv = val_of(nodes_[b]);
    if (av.cols != bv.rows) throw std::invalid_argument("matmul: inner dims mismatch");
    Node n;
    n.op = Op::MatMul;
    n.in = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = Tensor2(av.rows, bv.cols);
    matmul_nn(av, bv, n.val);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    check_id(a, size(), "add");
    check_id(b, size(), "add");
    const Tensor2& av = val_of(nodes_[a]);
    const Tensor2& bv = val_of(nodes_[b]);
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = av;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.d[i] += bv.d[i];
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    check_id(a, size(), "sub");
    check_id(b, size(), "sub");
    const Tensor2& av = val_of(nodes_[a]);
    const Tensor2& bv = val_of(nodes_[b]);
    if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.in = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = av;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.d[i] -= bv.d[i];
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    check_id(a, size(), "mul");
    check_id(b, size(), "mul");
    const Tensor2& av = val_of(nodes_[a]);
    const Tensor2& bv = val_of(nodes_[b]);
    if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = av;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.d[i] *= bv.d[i];
    return push(std::move(n));
}

int Tape::add_bias(int a, int bias) {
    check_id(a, size(), "add_bias");
    check_id(bias, size(), "add_bias");
    const Tensor2& av = val_of(nodes_[a]);
    const Tensor2& bv = val_of(nodes_[bias]);
    if (bv.rows != 1 || bv.cols != av.cols) throw std::invalid_argument("add_bias: bias shape");
    Node n;
    n.op = Op::AddBias;
    n.in = {a, bias};
    n.needs_grad = nodes_[a].needs_grad || nodes_[bias].needs_grad;
    n.val = av;
    for (int i = 0; i < av.rows; ++i) {
        double* row = n.val.row(i);
        for (int j = 0; j < av.cols; ++j) row[j] += bv.d[j];
    }
    return push(std::move(n));
}

int Tape::relu(int a) {
    check_id(a, size(), "relu");
    Node n;
    n.op = Op::Relu;
    n.in = {a, -1};
    n.needs_grad = nodes_[a].needs_grad;
    n.val = val_of(nodes_[a]);
    for (double& v : n.val.d) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int rows = -1, cols = 0;
    bool ng = false;
    for (int p : parts) {
        check_id(p, size(), "concat_cols");
        const Tensor2& v = val_of(nodes_[p]);
        if (rows < 0) rows = v.rows;
        if (v.rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += v.cols;
        ng = ng || nodes_[p].needs_grad;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.extra = parts;
    n.needs_grad = ng;
    n.val = Tensor2(rows, cols);
    int off = 0;
    for (int p : parts) {
        const Tensor2& v = val_of(nodes_[p]);
        for (int i = 0; i < rows; ++i) {
            const double* src = v.row(i);
            double* dst = n.val.row(i) + off;
            for (int j = 0; j < v.cols; ++j) dst[j] = src[j];
        }
        off += v.cols;
    }
    return push(std::move(n));
}

int Tape::gather_rows(int a, std::shared_ptr<const RowMap> plan) {
    check_id(a, size(), "gather_rows");
    const Tensor2& av = val_of(nodes_[a]);
    if (!plan) throw std::invalid_argument("gather_rows: null plan");
    if (plan->one_rows != av.rows) throw std::invalid_argument("gather_rows: plan rows mismatch");
    Node n;
    n.op = Op::GatherRows;
    n.in = {a, -1};
    n.plan = std::move(plan);
    n.needs_grad = nodes_[a].needs_grad;
    const int out_rows = static_cast<int>(n.plan->map.size());
    n.val = Tensor2(out_rows, av.cols);
    const auto& map = n.plan->map;
    par::parallel_for(out_rows, [&](std::int64_t i) {
        const double* src = av.row(map[i]);
        double* dst = n.val.row(static_cast<int>(i));
        for (int j = 0; j < av.cols; ++j) dst[j] = src[j];
    });
    return push(std::move(n));
}

int Tape::segment_sum(int a, std::shared_ptr<const RowMap> plan) {
    check_id(a, size(), "segment_sum");
    const Tensor2& av = val_of(nodes_[a]);
    if (!plan) throw std::invalid_argument("segment_sum: null plan");
    if (static_cast<int>(plan->map.size()) != av.rows)
        throw std::invalid_argument("segment_sum: plan rows mismatch");
    Node n;
    n.op = Op::SegmentSum;
    n.in = {a, -1};
    n.plan = std::move(plan);
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Tensor2(n.plan->one_rows, av.cols);
    const auto& rm = *n.plan;
    par::parallel_for(rm.one_rows, [&](std::int64_t s) {
        double* dst = n.val.row(static_cast<int>(s));
        for (int e = rm.offsets[s]; e < rm.offsets[s + 1]; ++e) {
            const double* src = av.row(rm.list[e]);
            for (int j = 0; j < av.cols; ++j) dst[j] += src[j];
        }
    });
    return push(std::move(n));
}

int Tape::mul_rows(int a, int v) {
    check_id(a, size(), "mul_rows");
    check_id(v, size(), "mul_rows");
    const Tensor2& av = val_of(nodes_[a]);
    const Tensor2& vv = val_of(nodes_[v]);
    if (vv.rows != av.rows || vv.cols != 1) throw std::invalid_argument("mul_rows: scale shape");
    Node n;
    n.op = Op::MulRows;
    n.in = {a, v};
    n.needs_grad = nodes_[a].needs_grad || nodes_[v].needs_grad;
    n.val = av;
    for (int i = 0; i < av.rows; ++i) {
        double* row = n.val.row(i);
        for (int j = 0; j < av.cols; ++j) row[j] *= vv.d[i];
    }
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    check_id(a, size(), "scale");
    Node n;
    n.op = Op::Scale;
    n.in = {a, -1};
    n.scalar = s;
    n.needs_grad = nodes_[a].needs_grad;
    n.val = val_of(nodes_[a]);
    for (double& v : n.val.d) v *= s;
    return push(std::move(n));
}

int Tape::sum_all(int a) {
    check_id(a, size(), "sum_all");
    const Tensor2& av = val_of(nodes_[a]);
    Node n;
    n.op = Op::SumAll;
    n.in = {a, -1};
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Tensor2(1, 1);
    double acc = 0.0;
    for (double v : av.d) acc += v;
    n.val.d[0] = acc;
    return push(std::move(n));
}

int Tape::row_norm(int a) {
    check_id(a, size(), "row_norm");
    const Tensor2& av = val_of(nodes_[a]);
    Node n;
    n.op = Op::RowNorm;
    n.in = {a, -1};
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Tensor2(av.rows, 1);
    for (int i = 0; i < av.rows; ++i) {
        const double* row = av.row(i);
        double acc = 0.0;
        for (int j = 0; j < av.cols; ++j) acc += row[j] * row[j];
        n.val.d[i] = std::sqrt(acc);
    }
    return push(std::move(n));
}

int Tape::reshape(int a, int rows, int cols) {
    check_id(a, size(), "reshape");
    const Tensor2& av = val_of(nodes_[a]);
    if (static_cast<size_t>(rows) * cols != av.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.in = {a, -1};
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Tensor2(rows, cols);
    n.val.d = av.d;
    return push(std::move(n));
}

const Tensor2& Tape::value(int id) const {
    check_id(id, size(), "value");
    return val_of(nodes_[id]);
}

const Tensor2& Tape::grad(int id) const {
    check_id(id, size(), "grad");
    if (!backward_done_) throw std::logic_error("Tape::grad: backward not run");
    return nodes_[id].grad;
}

void Tape::backward(int loss) {
    check_id(loss, size(), "backward");
    if (backward_done_) throw std::logic_error("Tape::backward: stale tape (already run)");
    const Tensor2& lv = val_of(nodes_[loss]);
    if (lv.rows != 1 || lv.cols != 1) throw std::invalid_argument("backward: loss must be 1x1");
    backward_done_ = true;
    for (Node& n : nodes_) {
        if (n.needs_grad) {
            const Tensor2& v = val_of(n);
            n.grad = Tensor2(v.rows, v.cols);
        }
    }
    if (!nodes_[loss].needs_grad) return;  // loss independent of any grad source
    nodes_[loss].grad.d[0] = 1.0;
    for (int id = loss; id >= 0; --id) {
        if (nodes_[id].needs_grad) backward_node(id);
    }
}

void Tape::backward_node(int id) {
    Node& n = nodes_[id];
    const Tensor2& g = n.grad;
    auto in_grad = [&](int i) -> Tensor2* {
        return (i >= 0 && nodes_[i].needs_grad) ? &nodes_[i].grad : nullptr;
    };
    switch (n.op) {
        case Op::Input:
        case Op::Param:
            break;
        case Op::MatMul: {
            const Tensor2& av = val_of(nodes_[n.in[0]]);
            const Tensor2& bv = val_of(nodes_[n.in[1]]);
            if (Tensor2* ga = in_grad(n.in[0])) matmul_nt(g, bv, *ga);
            if (Tensor2* gb = in_grad(n.in[1])) matmul_tn(av, g, *gb);
            break;
        }
        case Op::Add: {
            for (int s = 0; s < 2; ++s)
                if (Tensor2* gi = in_grad(n.in[s]))
                    for (size_t i = 0; i < g.size(); ++i) gi->d[i] += g.d[i];
            break;
        }
        case Op::Sub: {
            if (Tensor2* ga = in_grad(n.in[0]))
                for (size_t i = 0; i < g.size(); ++i) ga->d[i] += g.d[i];
            if (Tensor2* gb = in_grad(n.in[1]))
                for (size_t i = 0; i < g.size(); ++i) gb->d[i] -= g.d[i];
            break;
        }
        case Op::Mul: {
            const Tensor2& av = val_of(nodes_[n.in[0]]);
            const Tensor2& bv = val_of(nodes_[n.in[1]]);
            if (Tensor2* ga = in_grad(n.in[0]))
                for (size_t i = 0; i < g.size(); ++i) ga->d[i] += g.d[i] * bv.d[i];
            if (Tensor2* gb = in_grad(n.in[1]))
                for (size_t i = 0; i < g.size(); ++i) gb->d[i] += g.d[i] * av.d[i];
            break;
        }
        case Op::AddBias: {
            if (Tensor2* ga = in_grad(n.in[0]))
                for (size_t i = 0; i < g.size(); ++i) ga->d[i] += g.d[i];
            if (Tensor2* gb = in_grad(n.in[1])) {
                for (int i = 0; i < g.rows; ++i) {
                    const double* row = g.row(i);
                    for (int j = 0; j < g.cols; ++j) gb->d[j] += row[j];
                }
            }
            break;
        }
        case Op::Relu: {
            // Subgradient at 0 is 0.
            if (Tensor2* ga = in_grad(n.in[0])) {
                const Tensor2& av = val_of(nodes_[n.in[0]]);
                for (size_t i = 0; i < g.size(); ++i)
                    if (av.d[i] > 0.0) ga->d[i] += g.d[i];
            }
            break;
        }
        case Op::ConcatCols: {
            int off = 0;
            for (int p : n.extra) {
                const Tensor2& pv = val_of(nodes_[p]);
                if (Tensor2* gp = in_grad(p)) {
                    for (int i = 0; i < g.rows; ++i) {
                        const double* src = g.row(i) + off;
                        double* dst = gp->row(i);
                        for (int j = 0; j < pv.cols; ++j) dst[j] += src[j];
                    }
                }
                off += pv.cols;
            }
            break;
        }
        case Op::GatherRows: {
            if (Tensor2* ga = in_grad(n.in[0])) {
                const RowMap& rm = *n.plan;
                const int cols = g.cols;
                par::parallel_for(rm.one_rows, [&](std::int64_t r) {
                    double* dst = ga->row(static_cast<int>(r));
                    for (int e = rm.offsets[r]; e < rm.offsets[r + 1]; ++e) {
                        const double* src = g.row(rm.list[e]);
                        for (int j = 0; j < cols; ++j) dst[j] += src[j];
                    }
                });
            }
            break;
        }
        case Op::SegmentSum: {
            if (Tensor2* ga = in_grad(n.in[0])) {
                const auto& map = n.plan->map;
                const int cols = g.cols;
                par::parallel_for(static_cast<int>(map.size()), [&](std::int64_t i) {
                    const double* src = g.row(map[i]);
                    double* dst = ga->row(static_cast<int>(i));
                    for (int j = 0; j < cols; ++j) dst[j] += src[j];
                });
            }
            break;
        }
        case Op::MulRows: {
            const Tensor2& av = val_of(nodes_[n.in[0]]);
            const Tensor2& vv = val_of(nodes_[n.in[1]]);
            if (Tensor2* ga = in_grad(n.in[0])) {
                for (int i = 0; i < g.rows; ++i) {
                    const double s = vv.d[i];
                    const double* src = g.row(i);
                    double* dst = ga->row(i);
                    for (int j = 0; j < g.cols; ++j) dst[j] += src[j] * s;
                }
            }
            if (Tensor2* gv = in_grad(n.in[1])) {
                for (int i = 0; i < g.rows; ++i) {
                    const double* grow = g.row(i);
                    const double* arow = av.row(i);
                    double acc = 0.0;
                    for (int j = 0; j < g.cols; ++j) acc += grow[j] * arow[j];
                    gv->d[i] += acc;
                }
            }
            break;
        }
        case Op::Scale: {
            if (Tensor2* ga = in_grad(n.in[0]))
                for (size_t i = 0; i < g.size(); ++i) ga->d[i] += g.d[i] * n.scalar;
            break;
        }
        case Op::SumAll: {
            if (Tensor2* ga = in_grad(n.in[0])) {
                const double gv = g.d[0];
                for (double& v : ga->d) v += gv;
            }
            break;
        }
        case Op::Reshape: {
            if (Tensor2* ga = in_grad(n.in[0]))
                for (size_t i = 0; i < g.size(); ++i) ga->d[i] += g.d[i];
            break;
        }
        case Op::RowNorm: {
            if (Tensor2* ga = in_grad(n.in[0])) {
                const Tensor2& av = val_of(nodes_[n.in[0]]);
                for (int i = 0; i < av.rows; ++i) {
                    const double norm = n.val.d[i];
                    if (norm <= 0.0) continue;
                    const double gi = g.d[i] / norm;
                    const double* arow = av.row(i);
                    double* dst = ga->row(i);
                    for (int j = 0; j < av.cols; ++j) dst[j] += gi * arow[j];
                }
            }
            break;
        }
    }
}

}  // namespace hrn::ad
