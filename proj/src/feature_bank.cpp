#include "mlcc/feature_bank.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"

namespace mlcc {

FeatureBank::FeatureBank(std::vector<std::int64_t> ids, LabelMatrix labels, std::size_t feature_dim)
    : ids_(std::move(ids)), labels_(std::move(labels)), feature_dim_(feature_dim) {
  if (ids_.size() != labels_.rows()) throw DomainError("feature bank: ids and labels disagree");
  positives_.resize(labels_.cols());
  for (std::size_t n = 0; n < labels_.rows(); ++n) {
    for (std::size_t c = 0; c < labels_.cols(); ++c) {
      if (labels_(n, c)) positives_[c].push_back(n);
    }
  }
  data_.assign(ids_.size() * labels_.cols() * feature_dim_, 0.0);
}

Mat FeatureBank::sample_features(std::size_t sample) const {
  const std::size_t block = categories() * feature_dim_;
  return Mat(categories(), feature_dim_,
             std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(sample * block),
                                 data_.begin() + static_cast<std::ptrdiff_t>((sample + 1) * block)));
}

void FeatureBank::set_sample(std::size_t sample, const Mat& features) {
  if (features.rows() != categories() || features.cols() != feature_dim_) {
    throw DomainError("feature bank: sample block has the wrong shape");
  }
  std::copy(features.data().begin(), features.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(sample * categories() * feature_dim_));
}

Mat FeatureBank::positive_features(std::size_t category) const {
  const auto& pos = positives_[category];
  Mat out(pos.size(), feature_dim_);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const auto f = feature(pos[i], category);
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

bool FeatureBank::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void save_feature_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  std::string text;
  for (std::size_t n = 0; n < bank.size(); ++n) {
    for (std::size_t c = 0; c < bank.categories(); ++c) {
      text += "{\"id\":" + std::to_string(bank.ids()[n]) + ",\"c\":" + std::to_string(c) + ",\"f\":";
      io::append_array(text, bank.feature(n, c));
      text += "}\n";
    }
  }
  io::write_text(path, text);
}

FeatureBank load_feature_bank(const std::filesystem::path& path, const Dataset& ds) {
  const auto lines = io::read_lines(path);
  std::unordered_map<std::int64_t, std::size_t> row_of;
  std::vector<std::size_t> rows;
  std::vector<std::int64_t> ids;
  std::vector<std::vector<double>> feats;  // indexed by record order
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (bank row, category)
  std::unordered_map<std::int64_t, std::size_t> dataset_row;
  for (std::size_t i = 0; i < ds.ids.size(); ++i) dataset_row.emplace(ds.ids[i], i);

  std::size_t dim = 0;
  std::size_t line_no = 0;
  for (const auto& line : lines) {
    ++line_no;
    if (line.empty()) continue;
    const auto rec = io::parse_record(line, line_no);
    if (!rec.contains("id") || !rec["id"].is_number_integer() || !rec.contains("c") ||
        !rec["c"].is_number_unsigned()) {
      throw SchemaError("feature record needs integer \"id\" and \"c\" (line " + std::to_string(line_no) + ")");
    }
    const auto id = rec["id"].get<std::int64_t>();
    const auto c = rec["c"].get<std::size_t>();
    if (c >= ds.categories()) throw SchemaError("category out of range (line " + std::to_string(line_no) + ")");
    auto f = io::number_array(rec, "f", dim, line_no);
    if (dim == 0) dim = f.size();
    auto [it, inserted] = row_of.emplace(id, ids.size());
    if (inserted) {
      auto ds_it = dataset_row.find(id);
      if (ds_it == dataset_row.end()) {
        throw SchemaError("feature bank id " + std::to_string(id) + " not in dataset (line " +
                          std::to_string(line_no) + ")");
      }
      ids.push_back(id);
      rows.push_back(ds_it->second);
    }
    where.emplace_back(it->second, c);
    feats.push_back(std::move(f));
  }
  if (ids.empty()) throw SchemaError("feature bank " + path.string() + " is empty");
  if (feats.size() != ids.size() * ds.categories()) {
    throw SchemaError("feature bank does not hold one vector per (sample, category)");
  }

  const Dataset rows_ds = subset(ds, rows);
  FeatureBank bank(ids, rows_ds.labels, dim);
  std::vector<Mat> blocks(ids.size(), Mat(ds.categories(), dim));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    auto dst = blocks[where[i].first].row(where[i].second);
    std::copy(feats[i].begin(), feats[i].end(), dst.begin());
  }
  for (std::size_t n = 0; n < ids.size(); ++n) bank.set_sample(n, blocks[n]);
  return bank;
}

}  // namespace mlcc
