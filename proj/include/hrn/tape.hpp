#pragma once

#include <array>
#include <memory>
#include <vector>

#include "hrn/tensor.hpp"

namespace hrn::ad {

// Row indirection shared by gather and segment-sum nodes.
//
// `map` assigns every row on the "many" side to one row on the "one" side;
// `offsets`/`list` is the inverse as CSR with ascending row ids per bucket.
// The CSR side of any reduction is always walked in ascending order, which
// pins the floating-point summation order independent of thread count.
struct RowMap {
    std::vector<int> map;
    std::vector<int> offsets;
    std::vector<int> list;
    int one_rows = 0;

    static std::shared_ptr<const RowMap> build(std::vector<int> map, int one_rows);
};

enum class Op : unsigned char {
    Input,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    AddBias,
    Relu,
    ConcatCols,
    GatherRows,
    SegmentSum,
    MulRows,
    Scale,
    SumAll,
    RowNorm,
    Reshape,
};

// Reverse-mode tape over Tensor2 values. Nodes are appended in topological
// order; backward() runs once per tape.
class Tape {
public:
    int input(Tensor2 v, bool needs_grad = false);
    // Value stays owned by the caller and must outlive the tape.
    int param(const Tensor2* v);

    int matmul(int a, int b);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int add_bias(int a, int bias);            // (n x d) + (1 x d)
    int relu(int a);
    int concat_cols(const std::vector<int>& parts);
    int gather_rows(int a, std::shared_ptr<const RowMap> plan);
    int segment_sum(int a, std::shared_ptr<const RowMap> plan);
    int mul_rows(int a, int v);               // (n x d) scaled per-row by (n x 1)
    int scale(int a, double s);
    int sum_all(int a);                       // -> 1 x 1
    int row_norm(int a);                      // -> n x 1, sqrt of row sum of squares
    int reshape(int a, int rows, int cols);   // same element count, row-major

    const Tensor2& value(int id) const;
    const Tensor2& grad(int id) const;        // valid after backward for needs-grad nodes
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node
    // with needs_grad. loss must be 1x1. One shot: a second call throws.
    void backward(int loss);

private:
    struct Node {
        Op op;
        std::array<int, 2> in{-1, -1};
        std::vector<int> extra;
        Tensor2 val;
        const Tensor2* ref = nullptr;
        Tensor2 grad;
        std::shared_ptr<const RowMap> plan;
        double scalar = 0.0;
        bool needs_grad = false;
    };

    const Tensor2& val_of(const Node& n) const { return n.ref ? *n.ref : n.val; }
    int push(Node n);
    void backward_node(int id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Dense kernels shared by tape forward/backward. C must be pre-sized; all
// accumulate deterministically (fixed inner-loop order, one owner per output
// row/column).
void matmul_nn(const Tensor2& a, const Tensor2& b, Tensor2& c);        // C += A*B
void matmul_nt(const Tensor2& a, const Tensor2& b, Tensor2& c);        // C += A*B^T
void matmul_tn(const Tensor2& a, const Tensor2& b, Tensor2& c);        // C += A^T*B

}  // namespace hrn::ad
