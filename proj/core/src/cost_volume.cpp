#include "covtrack/cost_volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "covtrack/errors.hpp"

namespace covtrack {

namespace {

constexpr double kLogClamp = 1e-12;

Matrix flatten_cells(const FeatureGrid& g) {
  Matrix m(g.height * g.width, g.channels);
  m.data = g.data;
  return m;
}

// d/dp of (1 - p)^beta * log(max(p, clamp)), consistent with the clamped
// forward evaluation.
double focal_term_derivative(double p, double beta) {
  const double lead = std::pow(1.0 - p, beta);
  const double logp = std::log(std::max(p, kLogClamp));
  double d = -beta * std::pow(1.0 - p, beta - 1.0) * logp;
  if (p > kLogClamp) d += lead / p;
  return d;
}

int argmax_col_in_row(const Matrix& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols; ++c) {
    if (m.at(row, c) > m.at(row, best)) best = c;
  }
  return best;
}

int argmax_row_in_col(const Matrix& m, int col) {
  int best = 0;
  for (int r = 1; r < m.rows; ++r) {
    if (m.at(r, col) > m.at(best, col)) best = r;
  }
  return best;
}

}  // namespace

Matrix CostVolume::slice(int i, int j) const {
  Matrix s(hc, wc);
  const std::size_t base = (static_cast<std::size_t>(i) * wc + j) * hc * wc;
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(base), s.data.size(),
              s.data.begin());
  return s;
}

CostVolume build_cost_volume(const FeatureGrid& e_cur, const FeatureGrid& e_prev) {
  if (!e_cur.same_shape(e_prev)) {
    throw ShapeError("build_cost_volume: embedding grids differ in shape");
  }
  CostVolume c;
  c.hc = e_cur.height;
  c.wc = e_cur.width;
  c.channels = e_cur.channels;
  c.stride = e_cur.stride;
  c.cur = flatten_cells(e_cur);
  c.prev = flatten_cells(e_prev);

  // One matrix product of the flattened grids: values = cur * prev^T.
  Matrix prev_t(c.prev.cols, c.prev.rows);
  for (int r = 0; r < c.prev.rows; ++r) {
    for (int col = 0; col < c.prev.cols; ++col) {
      prev_t.at(col, r) = c.prev.at(r, col);
    }
  }
  c.values = matmul(c.cur, prev_t).data;
  return c;
}

Marginals marginal_likelihoods(const CostVolume& c, int i, int j, double temperature) {
  if (i < 0 || i >= c.hc || j < 0 || j >= c.wc) {
    throw InputError("marginal_likelihoods: cell index out of range");
  }
  const Matrix s = c.slice(i, j);
  Marginals m;
  m.horizontal = softmax_t(axis_maxpool(s, PoolAxis::kColumns), temperature);
  m.vertical = softmax_t(axis_maxpool(s, PoolAxis::kRows), temperature);
  return m;
}

OffsetTemplates offset_templates(int i, int j, int hc, int wc, int stride) {
  if (stride <= 0) {
    throw InputError("offset_templates: stride must be > 0");
  }
  OffsetTemplates t;
  t.horizontal.resize(static_cast<std::size_t>(wc));
  t.vertical.resize(static_cast<std::size_t>(hc));
  for (int l = 0; l < wc; ++l) t.horizontal[static_cast<std::size_t>(l)] = (l - j) * static_cast<double>(stride);
  for (int k = 0; k < hc; ++k) t.vertical[static_cast<std::size_t>(k)] = (k - i) * static_cast<double>(stride);
  return t;
}

std::array<double, 2> infer_offset(std::span<const double> horizontal_likelihood,
                                   std::span<const double> vertical_likelihood,
                                   std::span<const double> horizontal_template,
                                   std::span<const double> vertical_template) {
  if (horizontal_likelihood.size() != horizontal_template.size() ||
      vertical_likelihood.size() != vertical_template.size()) {
    throw ShapeError("infer_offset: likelihood/template lengths disagree");
  }
  double oh = 0.0;
  double ov = 0.0;
  for (std::size_t l = 0; l < horizontal_likelihood.size(); ++l) {
    oh += horizontal_likelihood[l] * horizontal_template[l];
  }
  for (std::size_t k = 0; k < vertical_likelihood.size(); ++k) {
    ov += vertical_likelihood[k] * vertical_template[k];
  }
  return {ov, oh};
}

OffsetField offset_field(const CostVolume& c, double temperature) {
  OffsetField field(c.hc, c.wc, c.stride);
  for (int i = 0; i < c.hc; ++i) {
    for (int j = 0; j < c.wc; ++j) {
      const Marginals m = marginal_likelihoods(c, i, j, temperature);
      const OffsetTemplates t = offset_templates(i, j, c.hc, c.wc, c.stride);
      const std::array<double, 2> o = infer_offset(m.horizontal, m.vertical,
                                                   t.horizontal, t.vertical);
      field.vertical(i, j) = o[0];
      field.horizontal(i, j) = o[1];
    }
  }
  return field;
}

OffsetField upsample_offsets(const OffsetField& o) {
  OffsetField out(o.height * 2, o.width * 2, std::max(1, o.stride / 2));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.vertical(y, x) = o.vertical(y / 2, x / 2);
      out.horizontal(y, x) = o.horizontal(y / 2, x / 2);
    }
  }
  return out;
}

SupervisionMask::SupervisionMask(int hc, int wc) : hc_(hc), wc_(wc) {
  if (hc < 1 || wc < 1) {
    throw ShapeError("SupervisionMask: grid dims must be >= 1");
  }
}

void SupervisionMask::add(int i, int j, int k, int l) {
  if (i < 0 || i >= hc_ || k < 0 || k >= hc_ || j < 0 || j >= wc_ || l < 0 || l >= wc_) {
    throw InputError("SupervisionMask: index out of range");
  }
  for (const Quad& q : entries_) {
    if (q.i == i && q.j == j) {
      throw DataError("SupervisionMask: current cell (" + std::to_string(i) + "," +
                      std::to_string(j) + ") already supervised");
    }
  }
  entries_.push_back(Quad{i, j, k, l});
}

double cva_loss(const CostVolume& c, const SupervisionMask& y, double beta,
                double temperature) {
  if (y.empty()) {
    throw InputError("cva_loss: supervision mask is empty");
  }
  if (y.hc() != c.hc || y.wc() != c.wc) {
    throw ShapeError("cva_loss: mask dims do not match volume");
  }
  double sum = 0.0;
  for (const SupervisionMask::Quad& q : y.entries()) {
    const Marginals m = marginal_likelihoods(c, q.i, q.j, temperature);
    const double pw = m.horizontal[static_cast<std::size_t>(q.l)];
    const double ph = m.vertical[static_cast<std::size_t>(q.k)];
    sum += std::pow(1.0 - pw, beta) * std::log(std::max(pw, kLogClamp));
    sum += std::pow(1.0 - ph, beta) * std::log(std::max(ph, kLogClamp));
  }
  return -sum / static_cast<double>(y.entries().size());
}

CvaGradients cva_loss_grad(const CostVolume& c, const SupervisionMask& y, double beta,
                           double temperature) {
  if (y.empty()) {
    throw InputError("cva_loss_grad: supervision mask is empty");
  }
  if (y.hc() != c.hc || y.wc() != c.wc) {
    throw ShapeError("cva_loss_grad: mask dims do not match volume");
  }

  const int cells = c.hc * c.wc;
  Matrix dcur(cells, c.channels);
  Matrix dprev(cells, c.channels);
  const double inv_n = 1.0 / static_cast<double>(y.entries().size());

  for (const SupervisionMask::Quad& q : y.entries()) {
    const Matrix s = c.slice(q.i, q.j);
    const std::vector<double> col_max = axis_maxpool(s, PoolAxis::kColumns);
    const std::vector<double> row_max = axis_maxpool(s, PoolAxis::kRows);
    const std::vector<double> pw = softmax_t(col_max, temperature);
    const std::vector<double> ph = softmax_t(row_max, temperature);

    // d loss / d pooled value, chained through the focal term and softmax.
    const double uw = -inv_n * focal_term_derivative(pw[static_cast<std::size_t>(q.l)], beta);
    const double uh = -inv_n * focal_term_derivative(ph[static_cast<std::size_t>(q.k)], beta);

    Matrix dslice(c.hc, c.wc);
    for (int n = 0; n < c.wc; ++n) {
      const double dm = uw * temperature * pw[static_cast<std::size_t>(q.l)] *
                        ((n == q.l ? 1.0 : 0.0) - pw[static_cast<std::size_t>(n)]);
      dslice.at(argmax_row_in_col(s, n), n) += dm;
    }
    for (int n = 0; n < c.hc; ++n) {
      const double dm = uh * temperature * ph[static_cast<std::size_t>(q.k)] *
                        ((n == q.k ? 1.0 : 0.0) - ph[static_cast<std::size_t>(n)]);
      dslice.at(n, argmax_col_in_row(s, n)) += dm;
    }

    // Slice value (k, l) is <cur_(i,j), prev_(k,l)>.
    const int cur_cell = q.i * c.wc + q.j;
    for (int k = 0; k < c.hc; ++k) {
      for (int l = 0; l < c.wc; ++l) {
        const double dv = dslice.at(k, l);
        if (dv == 0.0) continue;
        const int prev_cell = k * c.wc + l;
        for (int ch = 0; ch < c.channels; ++ch) {
          dcur.at(cur_cell, ch) += dv * c.prev.at(prev_cell, ch);
          dprev.at(prev_cell, ch) += dv * c.cur.at(cur_cell, ch);
        }
      }
    }
  }

  CvaGradients g;
  g.cur = FeatureGrid(c.hc, c.wc, c.channels, c.stride);
  g.cur.data = std::move(dcur.data);
  g.prev = FeatureGrid(c.hc, c.wc, c.channels, c.stride);
  g.prev.data = std::move(dprev.data);
  return g;
}

int quantize_to_cell(double pixel, int stride, int cells) {
  const double continuous = pixel / static_cast<double>(stride);
  const int cell = static_cast<int>(std::ceil(continuous - 0.5));
  return std::clamp(cell, 0, cells - 1);
}

SupervisionMask build_supervision(std::span<const ObjectCenter> cur,
                                  std::span<const ObjectCenter> prev, int stride, int hc,
                                  int wc) {
  if (stride <= 0) {
    throw InputError("build_supervision: stride must be > 0");
  }
  SupervisionMask mask(hc, wc);

  auto check_duplicates = [](std::span<const ObjectCenter> frame, const char* name) {
    for (std::size_t a = 0; a < frame.size(); ++a) {
      for (std::size_t b = a + 1; b < frame.size(); ++b) {
        if (frame[a].id == frame[b].id) {
          throw DataError(std::string("build_supervision: duplicate identity ") +
                          std::to_string(frame[a].id) + " in " + name + " frame");
        }
      }
    }
  };
  check_duplicates(cur, "current");
  check_duplicates(prev, "previous");

  for (const ObjectCenter& oc : cur) {
    const ObjectCenter* match = nullptr;
    for (const ObjectCenter& op : prev) {
      if (op.id == oc.id) {
        match = &op;
        break;
      }
    }
    if (match == nullptr) continue;
    const int i = quantize_to_cell(oc.cy, stride, hc);
    const int j = quantize_to_cell(oc.cx, stride, wc);
    const int k = quantize_to_cell(match->cy, stride, hc);
    const int l = quantize_to_cell(match->cx, stride, wc);
    mask.add(i, j, k, l);  // DataError when two identities collide in one cell
  }
  return mask;
}

}  // namespace covtrack
