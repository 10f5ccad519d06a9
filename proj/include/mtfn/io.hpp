#pragma once

// On-disk formats.
//
// CMF1 matrix file (all integers little-endian):
//   offset 0   magic "CMF1"
//   offset 4   u32 version (= 1)
//   offset 8   u32 rows
//   offset 12  u32 cols
//   offset 16  rows*cols IEEE-754 float64, row-major, little-endian
//
// CMK1 checkpoint file:
//   offset 0   magic "CMK1"
//   offset 4   u32 version (= 1)
//   offset 8   u32 manifest length n
//   offset 12  n bytes of JSON manifest (dims, rank, seed, tensor list)
//   then one CMF1 record per tensor, in manifest order.
//
// Group map: text file, one image index per line (line t = owner of text t).
// Rank lists: text file, one query per line, gallery indices separated by
// single spaces.
// Dataset manifest: JSON {"images": path, "texts": path, "groups": path,
// optional "splits": path}; relative paths resolve against the manifest's
// directory. The splits file holds one label (train/val/test) per image.
//
// Every writer goes through a temp file plus rename.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtfn/dataset.hpp"
#include "mtfn/fusion.hpp"
#include "mtfn/similarity.hpp"
#include "mtfn/tensor.hpp"

namespace mtfn {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kMatFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

std::string encode_mat(const Mat& m);
// Decodes one CMF1 record starting at `offset`; advances `offset` past it.
// Diagnostics report absolute byte offsets.
Mat decode_mat(std::string_view bytes, std::size_t& offset);

void write_mat(const fs::path& path, const Mat& m);
Mat read_mat(const fs::path& path);

void write_similarity(const fs::path& path, const SimilarityMatrix& s);
SimilarityMatrix read_similarity(const fs::path& path);

void write_group_map(const fs::path& path, const std::vector<std::size_t>& text_to_image);
std::vector<std::size_t> read_group_map(const fs::path& path);

void write_rank_lists(const fs::path& path, const std::vector<RankList>& lists);
std::vector<RankList> read_rank_lists(const fs::path& path);

struct DatasetManifest {
  fs::path images;
  fs::path texts;
  fs::path groups;
  std::optional<fs::path> splits;
};

// Every malformed manifest produces an Error naming the offending field.
DatasetManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

// Loads and validates the dataset; with `split`, keeps only images carrying
// that label.
PairedDataset load_dataset(const DatasetManifest& manifest,
                           const std::optional<std::string>& split = std::nullopt);

void write_checkpoint(const fs::path& path, const MtfnParams& params);
MtfnParams read_checkpoint(const fs::path& path);

}  // namespace mtfn
