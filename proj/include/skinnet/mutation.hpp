#pragma once

// Only linked into builds compiled with SKINNET_MUTATION (the mutation test).
// Each id corrupts one backward rule; 0 restores the correct kernels.
//   1 conv2d bias   2 conv2d input   3 max_pool2d   4 relu   5 sigmoid
//   6 softmax       7 upsample       8 mul          9 concat
namespace skinnet {
void set_mutation(int id);
}
