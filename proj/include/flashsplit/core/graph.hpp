#pragma once

#include <functional>
#include <vector>

#include "flashsplit/core/kernels.hpp"
#include "flashsplit/core/tensor.hpp"

namespace flashsplit {

// Reverse-mode tape. Ops record a backward closure when any input needs a
// gradient; backward() replays them newest-first. Parameter leaves accumulate
// straight into caller-owned grad tensors so one ParamStore can serve many
// graphs per step. A Graph instance is single-threaded and must outlive
// nothing; kernels inside ops still parallelize internally.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    int input(Tensor v);
    // External value; grads accumulate into *grad_acc (null = frozen leaf).
    int param(const Tensor* value, Tensor* grad_acc);

    const Tensor& val(int id) const;
    const Tensor& grad(int id) const;
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    int conv2d(int x, int w, int b, int stride = 1, int pad = 0);
    int group_norm(int x, int gamma, int beta, int groups, double eps = 1e-5);
    int silu(int x);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int scale(int x, double a);
    int offset(int x, double b);
    int abs_(int x);
    int clamp(int x, double lo, double hi);
    int concat_c(int a, int b);
    int upsample2x(int x);
    int tokens(int x);                 // [N,C,H,W] -> [N,C,H*W,1], same memory order
    int untokens(int x, int h, int w); // inverse
    int bmm(int a, bool ta, int b, bool tb);
    int softmax_h(int x);
    int depthwise_fixed(int x, std::vector<double> k, int kh, int kw);
    int add_nc11(int x, int v); // v: [N,C,1,1] broadcast over spatial dims
    int channel_affine(int x, std::vector<double> scale, std::vector<double> shift);
    int mean_all(int x);

    void backward(int root);

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        const Tensor* ext = nullptr;
        Tensor* ext_grad = nullptr;
        Tensor grad;
        bool needs_grad = false;
        bool touched = false;
        std::function<void()> back;
    };

    int push(Tensor value, bool needs_grad);
    Tensor& grad_buf(int id);
    void accumulate(int id, const Tensor& g);

    std::vector<Node> nodes_;
};

} // namespace flashsplit
