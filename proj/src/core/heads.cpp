#include "heads.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "error.hpp"
#include "rng.hpp"

namespace fmreg {

void Perceptron::validate() const {
  const bool shapes = b1.size() == W1.rows() && W2.cols() == W1.rows() && b2.size() == W2.rows();
  if (!shapes) fail(ErrorCode::Invariant, "perceptron: inconsistent layer shapes");
  if (!W1.allFinite() || !b1.allFinite() || !W2.allFinite() || !b2.allFinite())
    fail(ErrorCode::Invariant, "perceptron: non-finite parameter");
}

Eigen::MatrixXd Perceptron::forward(const Eigen::MatrixXd& rows) const {
  if (static_cast<std::size_t>(rows.cols()) != in())
    fail(ErrorCode::InvalidArgument, "perceptron: input width " + std::to_string(rows.cols()) + " does not match " + std::to_string(in()));
  Eigen::MatrixXd h = (rows * W1.transpose()).rowwise() + b1.transpose();
  h = h.cwiseMax(0.0);
  return (h * W2.transpose()).rowwise() + b2.transpose();
}

Perceptron Perceptron::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
  const auto i = static_cast<Eigen::Index>(in), h = static_cast<Eigen::Index>(hidden), o = static_cast<Eigen::Index>(out);
  return {Eigen::MatrixXd::Zero(h, i), Eigen::VectorXd::Zero(h), Eigen::MatrixXd::Zero(o, h), Eigen::VectorXd::Zero(o)};
}

Perceptron Perceptron::random(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, double scale) {
  Perceptron p = zeros(in, hidden, out);
  Rng rng(seed);
  auto fill = [&](auto& m, double s) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = s * standard_normal(rng);
  };
  fill(p.W1, scale / std::sqrt(static_cast<double>(in)));
  fill(p.b1, 0.1 * scale);
  fill(p.W2, scale / std::sqrt(static_cast<double>(hidden)));
  fill(p.b2, 0.1 * scale);
  return p;
}

Perceptron Perceptron::pass_through_mask(std::size_t in, std::size_t hidden) {
  Perceptron p = zeros(in, hidden, 1);
  p.b2[0] = 20.0;
  return p;
}

Eigen::MatrixXd logistic(const Eigen::MatrixXd& logits) {
  return logits.unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

namespace {

void check_head(const Perceptron& p, std::size_t in, std::size_t out, const char* name) {
  p.validate();
  if (p.in() != in || p.out() != out)
    fail(ErrorCode::InvalidArgument, std::string(name) + " head expects " + std::to_string(in) + " -> " + std::to_string(out) +
                                         ", got " + std::to_string(p.in()) + " -> " + std::to_string(p.out()));
}

}  // namespace

void FocusHeads::validate(std::size_t dim, std::size_t geo_width) const {
  check_head(offset, dim, 3, "offset");
  check_head(mask, dim + geo_width, 1, "point-mask");
}

FocusHeads FocusHeads::untrained(std::size_t dim, std::size_t geo_width) {
  return {Perceptron::zeros(dim, 2 * dim, 3), Perceptron::pass_through_mask(dim + geo_width, 2 * dim)};
}

void MatchHeads::validate(std::size_t dim, std::size_t geo_width) const {
  check_head(instance_mask, dim + geo_width, 1, "instance-mask");
  check_head(overlap_mask, dim + geo_width, 1, "overlap-mask");
}

MatchHeads MatchHeads::untrained(std::size_t dim, std::size_t geo_width) {
  return {Perceptron::pass_through_mask(dim + geo_width, 2 * dim), Perceptron::pass_through_mask(dim + geo_width, 2 * dim)};
}

namespace {

constexpr char kHeadMagic[4] = {'F', 'M', 'H', 'D'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

template <class M>
void put_matrix(std::ostream& out, const M& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float f = static_cast<float>(m(i, j));
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) fail(ErrorCode::Parse, path + ": truncated file");
  return v;
}

template <class M>
void get_matrix(std::istream& in, M& m, const std::string& path) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      float f;
      if (!in.read(reinterpret_cast<char*>(&f), 4)) fail(ErrorCode::Parse, path + ": truncated payload");
      m(i, j) = f;
    }
}

}  // namespace

void write_perceptrons(const std::string& path, const std::vector<Perceptron>& heads) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path + "'");
  out.write(kHeadMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(heads.size()));
  for (const auto& p : heads) {
    p.validate();
    put_u32(out, static_cast<std::uint32_t>(p.in()));
    put_u32(out, static_cast<std::uint32_t>(p.hidden()));
    put_u32(out, static_cast<std::uint32_t>(p.out()));
    put_matrix(out, p.W1);
    put_matrix(out, p.b1);
    put_matrix(out, p.W2);
    put_matrix(out, p.b2);
  }
  if (!out) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

std::vector<Perceptron> read_perceptrons(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kHeadMagic, 4) != 0) fail(ErrorCode::Parse, path + ": not a head weight file");
  if (get_u32(in, path) != 1) fail(ErrorCode::Parse, path + ": unsupported version");
  const auto count = get_u32(in, path);
  if (count > 64) fail(ErrorCode::Parse, path + ": implausible head count");
  std::vector<Perceptron> heads;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto i = get_u32(in, path), h = get_u32(in, path), o = get_u32(in, path);
    if (i == 0 || h == 0 || o == 0 || i > 1 << 16 || h > 1 << 16 || o > 1 << 16)
      fail(ErrorCode::Parse, path + ": implausible head shape");
    Perceptron p = Perceptron::zeros(i, h, o);
    get_matrix(in, p.W1, path);
    get_matrix(in, p.b1, path);
    get_matrix(in, p.W2, path);
    get_matrix(in, p.b2, path);
    p.validate();
    heads.push_back(std::move(p));
  }
  return heads;
}

}  // namespace fmreg
