#pragma once

#include <span>

#include "pan/autodiff.hpp"

namespace pan {

// input [N,C,H,W], weight [Co,C,kh,kw], bias [Co] or an invalid Var.
// Output spatial size is floor((H + 2*padding - kh) / stride) + 1.
Var conv2d(Graph& g, Var input, Var weight, Var bias, int stride, int padding);
Var conv2d(Graph& g, Var input, Var weight, int stride, int padding);

Var relu(Graph& g, Var input);

// Non-overlapping window (stride == size). Partial windows at the right and
// bottom edges are kept, so the output is ceil(H/size) x ceil(W/size).
Var max_pool2d(Graph& g, Var input, int size);

// [N,C,H,W] -> [N,C]
Var global_avg_pool(Graph& g, Var input);

// input [N,D], weight [K,D], bias [K] -> [N,K]
Var fully_connected(Graph& g, Var input, Var weight, Var bias);

// Mean of -log softmax(logits)[label] over rows. logits is [N,K] or [K];
// labels has N entries.
Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels);

}  // namespace pan
