// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <memory>
#include <span>
#include <vector>

#include "mmguide/random.hpp"

namespace mmguide {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Mode { Train, Infer };

inline constexpr double kBatchNormEpsilon = 1e-5;

/// FC -> batch norm -> ReLU, mapping one modality to the shared embedding
/// width. Columns of every input/output matrix are samples.
struct EmbeddingBlock {
  Matrix weight;        // embed x d_in
  Vector bias;          // embed
  Vector bn_scale;      // embed
  Vector bn_shift;      // embed
  Vector running_mean;  // embed
  Vector running_var;   // embed
  double momentum = 0.1;

  static EmbeddingBlock create(int d_in, int d_out, Rng &rng);
  static EmbeddingBlock zeros(int d_in, int d_out);
  int input_dim() const { return static_cast<int>(weight.cols()); }
  int output_dim() const { return static_cast<int>(weight.rows()); }
};

struct EmbedCache {
  Matrix input;
  Matrix normalized; // x_hat
  Matrix output;     // after ReLU
  Vector mean;
  Vector variance; // biased, used for normalization
  Vector inv_std;
  bool batch_statistics = false;
};

/// Pure forward pass. Train mode normalizes with batch statistics when the
/// batch has at least two columns and with running statistics otherwise.
EmbedCache embed_forward(const EmbeddingBlock &block, const Matrix &x,
                         Mode mode);

/// Momentum update of the running statistics from a train-mode pass.
void update_running_stats(EmbeddingBlock &block, const EmbedCache &cache);

/// Forward pass that also updates running statistics in train mode.
Matrix embed(EmbeddingBlock &block, const Matrix &x, Mode mode);

/// Accumulates parameter gradients into `grad` (same shapes as `block`).
void embed_backward(const EmbeddingBlock &block, const EmbedCache &cache,
                    const Matrix &grad_output, EmbeddingBlock &grad);

/// Maps a raw per-frame image descriptor to the image-embedding input.
/// Either the identity or a fixed (non-trainable) seeded random projection.
class ImageFeatureProvider {
public:
  static ImageFeatureProvider identity(int dim);
  static ImageFeatureProvider projection(int d_in, int d_out,
                                         std::uint64_t seed);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  Vector map(const Vector &raw) const;

private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  Matrix projection_; // empty for identity
};

/// theta/phi: attn x embed affinity maps; mask: additive n x n matrix.
struct AdjacencyParams {
  Matrix theta;
  Matrix phi;
  Matrix mask;

  static AdjacencyParams create(int embed, int attn, int nodes, Rng &rng);
  static AdjacencyParams zeros(int embed, int attn, int nodes);
  int nodes() const { return static_cast<int>(mask.rows()); }
};

/// Per-column adjacency for a batch of graphs. Entry (j, k) is a 1 x N row.
struct AdjacencyBatch {
  int nodes = 0;
  std::vector<RowVector> softmax;   // row-normalized affinities
  std::vector<RowVector> effective; // softmax + mask

  const RowVector &weight(int j, int k) const { return effective[j * nodes + k]; }
  /// n x n effective adjacency of column `col`.
  Matrix matrix(Eigen::Index col) const;
  Matrix softmax_matrix(Eigen::Index col) const;
};

struct AdjacencyCache {
  Matrix kernel;                // theta^T phi
  std::vector<Matrix> projected; // kernel * v_k
  AdjacencyBatch adjacency;
};

/// e_jk = <theta v_j, phi v_k>; row softmax over k; plus the mask.
AdjacencyCache adjacency_forward(const AdjacencyParams &p,
                                 std::span<const Matrix> nodes);

/// Single-graph convenience wrapper returning the effective n x n matrix.
Matrix adjacency(const AdjacencyParams &p, std::span<const Vector> nodes);

/// `grad_effective[j*n+k]` holds dL/dA_eff(j,k) per column. Accumulates into
/// `grad` (theta, phi, mask) and `grad_nodes`.
void adjacency_backward(const AdjacencyParams &p, const AdjacencyCache &cache,
                        std::span<const Matrix> nodes,
                        std::span<const RowVector> grad_effective,
                        AdjacencyParams &grad, std::span<Matrix> grad_nodes);

/// Graph-convolution message for one gate of one stream:
///   sum_k sigmoid(A(row, k) * (W v_k))
/// with the sigmoid applied to each scaled term before summation.
/// `projected[k]` must hold W v_k.
Matrix gate_message(const AdjacencyBatch &adj, int row,
                    std::span<const Matrix> projected);

/// Single-graph form: adj_row has one weight per node.
Vector gate_message(const Vector &adj_row, std::span<const Vector> nodes,
                    const Matrix &kernel);

/// Backward of gate_message. Accumulates dL/dW into grad_kernel, dL/dv_k into
/// grad_nodes and dL/dA(row, k) into grad_effective[row*n+k].
void gate_message_backward(const AdjacencyBatch &adj, int row,
                           std::span<const Matrix> nodes,
                           std::span<const Matrix> projected,
                           const Matrix &kernel, const Matrix &grad_message,
                           Matrix &grad_kernel, std::span<Matrix> grad_nodes,
                           std::span<RowVector> grad_effective);

} // namespace mmguide
