#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ldif/errors.hpp"

namespace ldif {

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm vector, similarity undefined");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::max(-1.0, std::min(1.0, c));
}

// Pairwise similarity matrix of a list of equally long vectors.
inline std::vector<std::vector<double>> cosine_matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    cosine_similarity(rows[i], rows[i]);  // rejects zero-norm rows
    m[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = cosine_similarity(rows[i], rows[j]);
  }
  return m;
}

}  // namespace ldif
