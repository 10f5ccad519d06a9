#include "mtfn/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mtfn/error.hpp"

namespace mtfn {

namespace {

using json = nlohmann::json;

constexpr std::size_t kMatHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffU));
}

void put_f64(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xffU));
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + k])) << (8 * k);
  return v;
}

double get_f64(std::string_view b, std::size_t at) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + k])) << (8 * k);
  return std::bit_cast<double>(bits);
}

[[noreturn]] void format_error(const std::string& what, std::size_t offset) {
  fail(ErrorKind::format, what + " at byte offset " + std::to_string(offset));
}

void need_bytes(std::string_view b, std::size_t at, std::size_t n, const char* what) {
  if (b.size() < at + n)
    format_error(std::string("truncated ") + what + ": need " + std::to_string(n) +
                     " bytes, file has " + std::to_string(b.size() - std::min(at, b.size())) +
                     " left",
                 at);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::size_t parse_index(std::string_view token, const fs::path& path, std::size_t line) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || token.empty())
    fail(ErrorKind::format, path.string() + ":" + std::to_string(line + 1) +
                                ": expected a non-negative integer, got '" + std::string(token) +
                                "'");
  return value;
}

std::string require_string(const json& j, const char* field, const fs::path& path) {
  if (!j.contains(field))
    fail(ErrorKind::format, "manifest " + path.string() + ": missing field '" + field + "'");
  if (!j.at(field).is_string() || j.at(field).get<std::string>().empty())
    fail(ErrorKind::format,
         "manifest " + path.string() + ": field '" + field + "' must be a non-empty string");
  return j.at(field).get<std::string>();
}

json dims_to_json(const ModelDims& d) {
  return json{{"d_raw_img", d.d_raw_img}, {"d_raw_txt", d.d_raw_txt}, {"d_v", d.d_v},
              {"d_t", d.d_t},             {"d_f", d.d_f},             {"d_f_tt", d.d_f_tt},
              {"rank", d.rank},           {"output_bias", d.output_bias}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.d_raw_img = j.at("d_raw_img").get<std::size_t>();
  d.d_raw_txt = j.at("d_raw_txt").get<std::size_t>();
  d.d_v = j.at("d_v").get<std::size_t>();
  d.d_t = j.at("d_t").get<std::size_t>();
  d.d_f = j.at("d_f").get<std::size_t>();
  d.d_f_tt = j.at("d_f_tt").get<std::size_t>();
  d.rank = j.at("rank").get<std::size_t>();
  d.output_bias = j.at("output_bias").get<bool>();
  return d;
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path() && !fs::exists(path.parent_path()))
    fail(ErrorKind::io, "cannot write " + path.string() + ": directory does not exist");
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string encode_mat(const Mat& m) {
  require(m.rows() > 0 && m.cols() > 0, ErrorKind::invalid_argument,
          "write_mat: refusing to write degenerate matrix " + m.shape_str());
  require(m.rows() <= UINT32_MAX && m.cols() <= UINT32_MAX, ErrorKind::invalid_argument,
          "write_mat: matrix " + m.shape_str() + " exceeds u32 header fields");
  std::string out;
  out.reserve(kMatHeaderBytes + 8 * m.size());
  out.append("CMF1", 4);
  put_u32(out, kMatFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double x : m.data()) put_f64(out, x);
  return out;
}

Mat decode_mat(std::string_view b, std::size_t& offset) {
  const std::size_t start = offset;
  need_bytes(b, start, kMatHeaderBytes, "CMF1 header");
  if (b.substr(start, 4) != "CMF1") format_error("bad magic (expected \"CMF1\")", start);
  const std::uint32_t version = get_u32(b, start + 4);
  if (version != kMatFormatVersion)
    format_error("unknown CMF1 version " + std::to_string(version), start + 4);
  const std::size_t rows = get_u32(b, start + 8);
  const std::size_t cols = get_u32(b, start + 12);
  if (rows == 0 || cols == 0)
    format_error("degenerate shape " + std::to_string(rows) + "x" + std::to_string(cols), start + 8);
  const std::size_t payload = rows * cols * 8;
  need_bytes(b, start + kMatHeaderBytes, payload, "CMF1 payload");
  std::vector<double> data(rows * cols);
  for (std::size_t k = 0; k < data.size(); ++k) data[k] = get_f64(b, start + kMatHeaderBytes + 8 * k);
  offset = start + kMatHeaderBytes + payload;
  return Mat(rows, cols, std::move(data));
}

void write_mat(const fs::path& path, const Mat& m) { write_file_atomic(path, encode_mat(m)); }

Mat read_mat(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t offset = 0;
  try {
    Mat m = decode_mat(bytes, offset);
    if (offset != bytes.size())
      format_error(std::to_string(bytes.size() - offset) + " trailing bytes after payload", offset);
    return m;
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_similarity(const fs::path& path, const SimilarityMatrix& s) { write_mat(path, s.scores()); }

SimilarityMatrix read_similarity(const fs::path& path) { return SimilarityMatrix(read_mat(path)); }

void write_group_map(const fs::path& path, const std::vector<std::size_t>& text_to_image) {
  std::string out;
  for (std::size_t img : text_to_image) out += std::to_string(img) + "\n";
  write_file_atomic(path, out);
}

std::vector<std::size_t> read_group_map(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<std::size_t> map;
  map.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) map.push_back(parse_index(lines[i], path, i));
  return map;
}

void write_rank_lists(const fs::path& path, const std::vector<RankList>& lists) {
  std::string out;
  for (const auto& list : lists) {
    for (std::size_t k = 0; k < list.size(); ++k) {
      if (k) out += ' ';
      out += std::to_string(list[k]);
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<RankList> read_rank_lists(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<RankList> lists;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    RankList list;
    std::string_view rest = lines[i];
    while (!rest.empty()) {
      const std::size_t sp = rest.find(' ');
      const std::string_view tok = rest.substr(0, sp);
      if (!tok.empty()) list.push_back(parse_index(tok, path, i));
      if (sp == std::string_view::npos) break;
      rest.remove_prefix(sp + 1);
    }
    lists.push_back(std::move(list));
  }
  return lists;
}

DatasetManifest read_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, "manifest " + path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::format, "manifest " + path.string() + ": top level must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "images" && key != "texts" && key != "groups" && key != "splits")
      fail(ErrorKind::format, "manifest " + path.string() + ": unknown field '" + key + "'");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  DatasetManifest m;
  m.images = resolve(require_string(j, "images", path));
  m.texts = resolve(require_string(j, "texts", path));
  m.groups = resolve(require_string(j, "groups", path));
  if (j.contains("splits")) m.splits = resolve(require_string(j, "splits", path));
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  json j{{"images", m.images.string()}, {"texts", m.texts.string()}, {"groups", m.groups.string()}};
  if (m.splits) j["splits"] = m.splits->string();
  write_file_atomic(path, j.dump(2) + "\n");
}

PairedDataset load_dataset(const DatasetManifest& manifest, const std::optional<std::string>& split) {
  PairedDataset data;
  data.images = read_mat(manifest.images);
  data.texts = read_mat(manifest.texts);
  data.text_to_image = read_group_map(manifest.groups);
  data.validate();
  if (!split) return data;
  require(manifest.splits.has_value(), ErrorKind::invalid_argument,
          "dataset: split '" + *split + "' requested but the manifest has no 'splits' field");
  const auto labels = read_lines(*manifest.splits);
  require(labels.size() == data.n_images(), ErrorKind::shape,
          "dataset: splits file has " + std::to_string(labels.size()) + " labels for " +
              std::to_string(data.n_images()) + " images");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == "train" || labels[i] == "val" || labels[i] == "test",
            ErrorKind::format,
            manifest.splits->string() + ":" + std::to_string(i + 1) + ": unknown split label '" +
                labels[i] + "'");
    if (labels[i] == *split) keep.push_back(i);
  }
  require(!keep.empty(), ErrorKind::invalid_argument, "dataset: split '" + *split + "' is empty");
  return data.subset(keep);
}

void write_checkpoint(const fs::path& path, const MtfnParams& params) {
  json tensors = json::array();
  std::string blobs;
  auto add_branch = [&](const char* prefix, const FusionBranchParams& b) {
    b.validate();
    b.for_each_tensor([&](const std::string& name, const Mat& m) {
      tensors.push_back({{"name", std::string(prefix) + "." + name}, {"rows", m.rows()}, {"cols", m.cols()}});
      blobs += encode_mat(m);
    });
  };
  add_branch("it", params.it_branch);
  add_branch("tt", params.tt_branch);
  const json manifest{{"format", "mtfn-checkpoint"},
                      {"dims", dims_to_json(params.dims)},
                      {"rank", params.dims.rank},
                      {"seed", params.seed},
                      {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::string out;
  out.append("CMK1", 4);
  put_u32(out, kCheckpointFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blobs;
  write_file_atomic(path, out);
}

MtfnParams read_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  try {
    need_bytes(bytes, 0, 12, "CMK1 header");
    if (std::string_view(bytes).substr(0, 4) != "CMK1") format_error("bad magic (expected \"CMK1\")", 0);
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kCheckpointFormatVersion)
      format_error("unknown CMK1 version " + std::to_string(version), 4);
    const std::size_t len = get_u32(bytes, 8);
    need_bytes(bytes, 12, len, "CMK1 manifest");
    json manifest;
    try {
      manifest = json::parse(bytes.substr(12, len));
    } catch (const json::exception& e) {
      format_error(std::string("checkpoint manifest is not valid JSON: ") + e.what(), 12);
    }
    MtfnParams p;
    try {
      p.dims = dims_from_json(manifest.at("dims"));
      p.seed = manifest.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      format_error(std::string("checkpoint manifest: ") + e.what(), 12);
    }
    std::size_t offset = 12 + len;
    for (const auto& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const std::size_t at = offset;
      Mat m = decode_mat(bytes, offset);
      if (m.rows() != t.at("rows").get<std::size_t>() || m.cols() != t.at("cols").get<std::size_t>())
        format_error("tensor " + name + " shape " + m.shape_str() + " disagrees with manifest", at);
      const std::size_t dot_pos = name.find('.');
      const std::string branch_name = name.substr(0, dot_pos);
      const std::string field = name.substr(dot_pos + 1);
      FusionBranchParams* b = branch_name == "it"   ? &p.it_branch
                              : branch_name == "tt" ? &p.tt_branch
                                                    : nullptr;
      if (b == nullptr) format_error("unknown tensor " + name, at);
      if (field == "w_in_a") b->w_in_a = std::move(m);
      else if (field == "w_in_b") b->w_in_b = std::move(m);
      else if (field == "w_out") b->w_out = std::move(m);
      else if (field == "out_bias") b->out_bias = std::move(m);
      else if (field.rfind("factor_a.", 0) == 0) b->factors_a.push_back(std::move(m));
      else if (field.rfind("factor_b.", 0) == 0) b->factors_b.push_back(std::move(m));
      else format_error("unknown tensor " + name, at);
    }
    if (offset != bytes.size())
      format_error(std::to_string(bytes.size() - offset) + " trailing bytes", offset);
    p.it_branch.validate();
    p.tt_branch.validate();
    return p;
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": checkpoint manifest: " + e.what());
  }
}

}  // namespace mtfn
