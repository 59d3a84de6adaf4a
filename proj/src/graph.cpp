// SPDX-License-Identifier: Apache-2.0
#include "mmguide/graph.hpp"

#include <cmath>

#include "mmguide/errors.hpp"

namespace mmguide {

namespace {

Matrix uniform_matrix(int rows, int cols, double bound, Rng &rng) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      m(r, c) = dist(rng);
  return m;
}

Matrix sigmoid(const Matrix &x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

} // namespace

EmbeddingBlock EmbeddingBlock::create(int d_in, int d_out, Rng &rng) {
  EmbeddingBlock b = zeros(d_in, d_out);
  b.weight = uniform_matrix(d_out, d_in, 1.0 / std::sqrt(double(d_in)), rng);
  b.bn_scale.setOnes();
  return b;
}

EmbeddingBlock EmbeddingBlock::zeros(int d_in, int d_out) {
  EmbeddingBlock b;
  b.weight = Matrix::Zero(d_out, d_in);
  b.bias = Vector::Zero(d_out);
  b.bn_scale = Vector::Zero(d_out);
  b.bn_shift = Vector::Zero(d_out);
  b.running_mean = Vector::Zero(d_out);
  b.running_var = Vector::Ones(d_out);
  return b;
}

EmbedCache embed_forward(const EmbeddingBlock &block, const Matrix &x,
                         Mode mode) {
  if (x.rows() != block.input_dim())
    throw InvalidArgument("embed: input dimension mismatch");
  if (!x.allFinite())
    throw InvalidArgument("embed: non-finite input");
  EmbedCache c;
  c.input = x;
  Matrix pre = block.weight * x;
  pre.colwise() += block.bias;
  const Eigen::Index n = x.cols();
  c.batch_statistics = mode == Mode::Train && n >= 2;
  if (c.batch_statistics) {
    c.mean = pre.rowwise().mean();
    pre.colwise() -= c.mean;
    c.variance = pre.array().square().rowwise().mean();
  } else {
    c.mean = block.running_mean;
    pre.colwise() -= c.mean;
    c.variance = block.running_var;
  }
  c.inv_std = (c.variance.array() + kBatchNormEpsilon).rsqrt();
  c.normalized = c.inv_std.asDiagonal() * pre;
  Matrix y = block.bn_scale.asDiagonal() * c.normalized;
  y.colwise() += block.bn_shift;
  c.output = y.cwiseMax(0.0);
  return c;
}

void update_running_stats(EmbeddingBlock &block, const EmbedCache &cache) {
  if (!cache.batch_statistics)
    return;
  const double n = static_cast<double>(cache.input.cols());
  const double m = block.momentum;
  block.running_mean = (1.0 - m) * block.running_mean + m * cache.mean;
  block.running_var =
      (1.0 - m) * block.running_var + m * cache.variance * (n / (n - 1.0));
}

Matrix embed(EmbeddingBlock &block, const Matrix &x, Mode mode) {
  EmbedCache c = embed_forward(block, x, mode);
  if (mode == Mode::Train)
    update_running_stats(block, c);
  return std::move(c.output);
}

void embed_backward(const EmbeddingBlock &block, const EmbedCache &cache,
                    const Matrix &grad_output, EmbeddingBlock &grad) {
  // ReLU is inactive where the output is exactly zero.
  const Matrix g_y =
      (cache.output.array() > 0.0).select(grad_output, 0.0).matrix();
  grad.bn_scale += g_y.cwiseProduct(cache.normalized).rowwise().sum();
  grad.bn_shift += g_y.rowwise().sum();
  const Matrix g_hat = block.bn_scale.asDiagonal() * g_y;

  Matrix g_pre;
  if (cache.batch_statistics) {
    const double n = static_cast<double>(g_hat.cols());
    const Vector sum_g = g_hat.rowwise().sum();
    const Vector sum_gx = g_hat.cwiseProduct(cache.normalized).rowwise().sum();
    g_pre = n * g_hat;
    g_pre.colwise() -= sum_g;
    g_pre -= sum_gx.asDiagonal() * cache.normalized;
    g_pre = (cache.inv_std / n).asDiagonal() * g_pre;
  } else {
    g_pre = cache.inv_std.asDiagonal() * g_hat;
  }
  grad.weight.noalias() += g_pre * cache.input.transpose();
  grad.bias += g_pre.rowwise().sum();
}

ImageFeatureProvider ImageFeatureProvider::identity(int dim) {
  ImageFeatureProvider p;
  p.input_dim_ = p.output_dim_ = dim;
  return p;
}

ImageFeatureProvider ImageFeatureProvider::projection(int d_in, int d_out,
                                                      std::uint64_t seed) {
  ImageFeatureProvider p;
  p.input_dim_ = d_in;
  p.output_dim_ = d_out;
  Rng rng = derive_rng(seed, 0x1a6e);
  p.projection_ = Matrix(d_out, d_in);
  for (Eigen::Index c = 0; c < d_in; ++c)
    for (Eigen::Index r = 0; r < d_out; ++r)
      p.projection_(r, c) = standard_normal(rng) / std::sqrt(double(d_in));
  return p;
}

Vector ImageFeatureProvider::map(const Vector &raw) const {
  if (raw.size() != input_dim_)
    throw InvalidArgument("image feature dimension mismatch");
  if (projection_.size() == 0)
    return raw;
  return projection_ * raw;
}

AdjacencyParams AdjacencyParams::create(int embed, int attn, int nodes,
                                        Rng &rng) {
  AdjacencyParams p;
  const double bound = 1.0 / std::sqrt(double(embed));
  p.theta = uniform_matrix(attn, embed, bound, rng);
  p.phi = uniform_matrix(attn, embed, bound, rng);
  p.mask = Matrix::Zero(nodes, nodes);
  return p;
}

AdjacencyParams AdjacencyParams::zeros(int embed, int attn, int nodes) {
  return {Matrix::Zero(attn, embed), Matrix::Zero(attn, embed),
          Matrix::Zero(nodes, nodes)};
}

Matrix AdjacencyBatch::matrix(Eigen::Index col) const {
  Matrix m(nodes, nodes);
  for (int j = 0; j < nodes; ++j)
    for (int k = 0; k < nodes; ++k)
      m(j, k) = effective[j * nodes + k][col];
  return m;
}

Matrix AdjacencyBatch::softmax_matrix(Eigen::Index col) const {
  Matrix m(nodes, nodes);
  for (int j = 0; j < nodes; ++j)
    for (int k = 0; k < nodes; ++k)
      m(j, k) = softmax[j * nodes + k][col];
  return m;
}

AdjacencyCache adjacency_forward(const AdjacencyParams &p,
                                 std::span<const Matrix> nodes) {
  const int n = static_cast<int>(nodes.size());
  if (n != p.nodes())
    throw InvalidArgument("adjacency: node count does not match mask");
  AdjacencyCache c;
  c.kernel = p.theta.transpose() * p.phi;
  c.projected.reserve(n);
  for (const Matrix &v : nodes)
    c.projected.push_back(c.kernel * v);

  const Eigen::Index cols = nodes[0].cols();
  AdjacencyBatch &a = c.adjacency;
  a.nodes = n;
  a.softmax.assign(n * n, RowVector(cols));
  a.effective.assign(n * n, RowVector(cols));
  std::vector<RowVector> logits(n);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k)
      logits[k] = nodes[j].cwiseProduct(c.projected[k]).colwise().sum();
    RowVector peak = logits[0];
    for (int k = 1; k < n; ++k)
      peak = peak.cwiseMax(logits[k]);
    RowVector total = RowVector::Zero(cols);
    for (int k = 0; k < n; ++k) {
      logits[k] = (logits[k] - peak).array().exp().matrix();
      total += logits[k];
    }
    for (int k = 0; k < n; ++k) {
      a.softmax[j * n + k] = logits[k].cwiseQuotient(total);
      a.effective[j * n + k] = a.softmax[j * n + k].array() + p.mask(j, k);
    }
  }
  return c;
}

Matrix adjacency(const AdjacencyParams &p, std::span<const Vector> nodes) {
  std::vector<Matrix> cols(nodes.begin(), nodes.end());
  return adjacency_forward(p, cols).adjacency.matrix(0);
}

void adjacency_backward(const AdjacencyParams &p, const AdjacencyCache &cache,
                        std::span<const Matrix> nodes,
                        std::span<const RowVector> grad_effective,
                        AdjacencyParams &grad, std::span<Matrix> grad_nodes) {
  const int n = cache.adjacency.nodes;
  const auto &soft = cache.adjacency.softmax;
  Matrix grad_kernel = Matrix::Zero(cache.kernel.rows(), cache.kernel.cols());
  std::vector<Matrix> kernel_t_nodes;
  kernel_t_nodes.reserve(n);
  for (int j = 0; j < n; ++j)
    kernel_t_nodes.push_back(cache.kernel.transpose() * nodes[j]);

  for (int j = 0; j < n; ++j) {
    RowVector inner = RowVector::Zero(soft[j * n].size());
    for (int k = 0; k < n; ++k) {
      grad.mask(j, k) += grad_effective[j * n + k].sum();
      inner += soft[j * n + k].cwiseProduct(grad_effective[j * n + k]);
    }
    for (int k = 0; k < n; ++k) {
      const RowVector g_logit =
          soft[j * n + k].cwiseProduct(grad_effective[j * n + k] - inner);
      const Matrix scaled_j = nodes[j] * g_logit.asDiagonal();
      grad_nodes[j].noalias() += cache.projected[k] * g_logit.asDiagonal();
      grad_nodes[k].noalias() += kernel_t_nodes[j] * g_logit.asDiagonal();
      grad_kernel.noalias() += scaled_j * nodes[k].transpose();
    }
  }
  // kernel = theta^T phi
  grad.theta.noalias() += p.phi * grad_kernel.transpose();
  grad.phi.noalias() += p.theta * grad_kernel;
}

Matrix gate_message(const AdjacencyBatch &adj, int row,
                    std::span<const Matrix> projected) {
  Matrix out = Matrix::Zero(projected[0].rows(), projected[0].cols());
  for (int k = 0; k < adj.nodes; ++k)
    out += sigmoid(projected[k] * adj.weight(row, k).asDiagonal());
  return out;
}

Vector gate_message(const Vector &adj_row, std::span<const Vector> nodes,
                    const Matrix &kernel) {
  if (adj_row.size() != static_cast<Eigen::Index>(nodes.size()))
    throw InvalidArgument("gate_message: adjacency row/node count mismatch");
  Vector out = Vector::Zero(kernel.rows());
  for (std::size_t k = 0; k < nodes.size(); ++k)
    out += sigmoid(adj_row[k] * (kernel * nodes[k]));
  return out;
}

void gate_message_backward(const AdjacencyBatch &adj, int row,
                           std::span<const Matrix> nodes,
                           std::span<const Matrix> projected,
                           const Matrix &kernel, const Matrix &grad_message,
                           Matrix &grad_kernel, std::span<Matrix> grad_nodes,
                           std::span<RowVector> grad_effective) {
  const int n = adj.nodes;
  for (int k = 0; k < n; ++k) {
    const RowVector &a = adj.weight(row, k);
    const Matrix s = sigmoid(projected[k] * a.asDiagonal());
    const Matrix g_arg =
        grad_message.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
    grad_effective[row * n + k] += g_arg.cwiseProduct(projected[k]).colwise().sum();
    const Matrix g_proj = g_arg * a.asDiagonal();
    grad_kernel.noalias() += g_proj * nodes[k].transpose();
    grad_nodes[k].noalias() += kernel.transpose() * g_proj;
  }
}

} // namespace mmguide
