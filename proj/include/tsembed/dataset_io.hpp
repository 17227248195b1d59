#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

#include "tsembed/data.hpp"
#include "tsembed/errors.hpp"
#include "tsembed/io_util.hpp"

namespace tsembed {

// On-disk dataset container: a directory holding
//   manifest.csv  trial_id,subject,im_class,split,order_index,offset
//   samples.bin   trials concatenated, each row-major time-major (time, then
//                 channel), little-endian IEEE-754 float32
//   meta.csv      time_steps,channels,n_labels,label_names,label_cardinalities
//                 with ';' separating the entries of the two list cells
//
// The container carries exactly the two labels subject and im_class.

namespace detail {

inline const char* kManifestHeader =
    "trial_id,subject,im_class,split,order_index,offset";
inline const char* kMetaHeader =
    "time_steps,channels,n_labels,label_names,label_cardinalities";

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  validate_dataset(ds);
  if (ds.n_labels() != 2 || ds.label_names[0] != "subject" ||
      ds.label_names[1] != "im_class")
    throw FormatError("container format requires labels (subject, im_class)");
  for (const std::string& name : ds.label_names)
    if (name.find_first_of(",;\n") != std::string::npos)
      throw FormatError("label name '" + name + "' contains a separator");

  namespace fs = std::filesystem;
  fs::create_directories(dir);

  const Eigen::Index t = ds.trials[0].time_steps();
  const Eigen::Index c = ds.trials[0].channels();
  const std::size_t bytes_per_trial = static_cast<std::size_t>(t) * c * 4;

  std::string manifest = std::string(detail::kManifestHeader) + "\n";
  std::string blob;
  blob.reserve(bytes_per_trial * ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Trial& tr = ds.trials[i];
    manifest += std::to_string(tr.trial_id) + "," +
                std::to_string(ds.labels[i][0]) + "," +
                std::to_string(ds.labels[i][1]) + "," +
                (ds.split[i] == Split::kTrain ? "train" : "test") + "," +
                std::to_string(tr.order_index) + "," +
                std::to_string(blob.size()) + "\n";
    for (Eigen::Index row = 0; row < t; ++row)
      for (Eigen::Index col = 0; col < c; ++col)
        ioutil::append_f32_le(blob, static_cast<float>(tr.samples(row, col)));
  }

  std::string meta = std::string(detail::kMetaHeader) + "\n";
  meta += std::to_string(t) + "," + std::to_string(c) + ",2," +
          detail::join(ds.label_names, ';') + "," +
          std::to_string(ds.label_cardinalities[0]) + ";" +
          std::to_string(ds.label_cardinalities[1]) + "\n";

  ioutil::write_file((fs::path(dir) / "manifest.csv").string(), manifest);
  ioutil::write_file((fs::path(dir) / "samples.bin").string(), blob);
  ioutil::write_file((fs::path(dir) / "meta.csv").string(), meta);
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "meta.csv").string();
  const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
  const std::string blob_path = (fs::path(dir) / "samples.bin").string();

  const auto meta_lines = ioutil::read_lines(meta_path);
  if (meta_lines.size() < 2 || ioutil::strip(meta_lines[0]) != detail::kMetaHeader)
    throw FormatError(meta_path + ":1: bad or missing meta header");
  const auto meta_cells = ioutil::split(meta_lines[1], ',');
  if (meta_cells.size() != 5)
    throw FormatError(meta_path + ":2: expected 5 cells");
  const std::int64_t time_steps =
      ioutil::parse_int(meta_cells[0], meta_path + ":2");
  const std::int64_t channels =
      ioutil::parse_int(meta_cells[1], meta_path + ":2");
  const std::int64_t n_labels =
      ioutil::parse_int(meta_cells[2], meta_path + ":2");
  if (time_steps < 1 || channels < 1)
    throw FormatError(meta_path + ":2: non-positive trial shape");
  if (n_labels != 2)
    throw FormatError(meta_path + ":2: container carries exactly 2 labels");
  const auto names = ioutil::split(meta_cells[3], ';');
  const auto cards = ioutil::split(meta_cells[4], ';');
  if (names.size() != 2 || cards.size() != 2)
    throw FormatError(meta_path + ":2: expected 2 label names/cardinalities");

  Dataset ds;
  ds.label_names = {ioutil::strip(names[0]), ioutil::strip(names[1])};
  ds.label_cardinalities = {
      static_cast<int>(ioutil::parse_int(cards[0], meta_path + ":2")),
      static_cast<int>(ioutil::parse_int(cards[1], meta_path + ":2"))};

  const std::string blob = ioutil::read_binary_file(blob_path);
  const std::size_t bytes_per_trial =
      static_cast<std::size_t>(time_steps) * static_cast<std::size_t>(channels) * 4;

  const auto lines = ioutil::read_lines(manifest_path);
  if (lines.empty() || ioutil::strip(lines[0]) != detail::kManifestHeader)
    throw FormatError(manifest_path + ":1: bad or missing manifest header");

  std::unordered_set<std::int64_t> seen_ids;
  std::size_t n_rows = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (ioutil::strip(lines[li]).empty()) continue;
    const std::string where = manifest_path + ":" + std::to_string(li + 1);
    const auto cells = ioutil::split(lines[li], ',');
    if (cells.size() != 6) throw FormatError(where + ": expected 6 cells");
    Trial tr;
    tr.trial_id = ioutil::parse_int(cells[0], where);
    const int subject = static_cast<int>(ioutil::parse_int(cells[1], where));
    const int im_class = static_cast<int>(ioutil::parse_int(cells[2], where));
    const std::string split_str = ioutil::strip(cells[3]);
    Split sp;
    if (split_str == "train")
      sp = Split::kTrain;
    else if (split_str == "test")
      sp = Split::kTest;
    else
      throw FormatError(where + ": split must be 'train' or 'test', got '" +
                        split_str + "'");
    tr.order_index = ioutil::parse_int(cells[4], where);
    const std::int64_t offset = ioutil::parse_int(cells[5], where);
    if (!seen_ids.insert(tr.trial_id).second)
      throw FormatError(where + ": duplicate trial_id " +
                        std::to_string(tr.trial_id));
    if (offset < 0 ||
        static_cast<std::size_t>(offset) + bytes_per_trial > blob.size())
      throw ShapeMismatch(where + ": blob offset " + std::to_string(offset) +
                          " + trial size exceeds samples.bin length " +
                          std::to_string(blob.size()));
    tr.samples.resize(time_steps, channels);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(blob.data()) + offset;
    for (std::int64_t row = 0; row < time_steps; ++row)
      for (std::int64_t col = 0; col < channels; ++col) {
        tr.samples(row, col) = static_cast<double>(ioutil::read_f32_le(p));
        p += 4;
      }
    ds.trials.push_back(std::move(tr));
    ds.labels.push_back({subject, im_class});
    ds.split.push_back(sp);
    ++n_rows;
  }
  if (n_rows * bytes_per_trial != blob.size())
    throw ShapeMismatch(blob_path + ": length " + std::to_string(blob.size()) +
                        " disagrees with manifest (" + std::to_string(n_rows) +
                        " trials of " + std::to_string(bytes_per_trial) +
                        " bytes)");
  validate_dataset(ds);
  return ds;
}

inline bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size() || a.label_names != b.label_names ||
      a.label_cardinalities != b.label_cardinalities)
    return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.labels[i] != b.labels[i] || a.split[i] != b.split[i]) return false;
    const Trial& x = a.trials[i];
    const Trial& y = b.trials[i];
    if (x.trial_id != y.trial_id || x.order_index != y.order_index)
      return false;
    if (x.samples.rows() != y.samples.rows() ||
        x.samples.cols() != y.samples.cols())
      return false;
    if (x.samples != y.samples) return false;
  }
  return true;
}

}  // namespace tsembed
