#include "mmsynth/image_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "mmsynth/error.hpp"
#include "mmsynth/rng.hpp"

namespace mmsynth {
namespace {

// Score descending, then id ascending.
bool ranks_before(double sa, std::string_view ia, double sb, std::string_view ib) {
  if (sa != sb) return sa > sb;
  return ia < ib;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ImageRecord parse_record(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw ManifestError(line, "expected a JSON object");
  ImageRecord rec;
  const auto id = j.find("id");
  if (id == j.end() || !id->is_string() || id->get<std::string>().empty()) {
    throw ManifestError(line, "missing or empty string field \"id\"");
  }
  rec.id = id->get<std::string>();
  const auto loc = j.find("locator");
  if (loc == j.end() || !loc->is_string()) throw ManifestError(line, "missing string field \"locator\"");
  rec.locator = loc->get<std::string>();
  if (const auto cap = j.find("caption"); cap != j.end() && !cap->is_null()) {
    if (!cap->is_string()) throw ManifestError(line, "\"caption\" must be a string");
    rec.caption = cap->get<std::string>();
  }
  if (const auto st = j.find("status"); st != j.end() && !st->is_null()) {
    if (!st->is_string()) throw ManifestError(line, "\"status\" must be a string");
    const auto s = st->get<std::string>();
    if (s == "ok") {
      rec.status = ImageStatus::kOk;
    } else if (s == "excluded") {
      rec.status = ImageStatus::kExcluded;
    } else {
      throw ManifestError(line, "unknown status \"" + s + "\"");
    }
  }
  return rec;
}

}  // namespace

Corpus Corpus::from_records(std::vector<ImageRecord> records) {
  Corpus c;
  std::unordered_set<std::string> seen;
  for (auto& rec : records) {
    if (!seen.insert(rec.id).second) throw CorpusError("duplicate image id: " + rec.id);
    if (rec.status == ImageStatus::kExcluded) {
      ++c.excluded_;
      continue;
    }
    c.index_.emplace(rec.id, c.records_.size());
    c.records_.push_back(std::move(rec));
  }
  if (c.records_.empty()) throw CorpusError("empty corpus: no usable image records");
  return c;
}

const ImageRecord* Corpus::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

Corpus parse_manifest(std::string_view text) {
  std::vector<ImageRecord> records;
  std::unordered_map<std::string, std::size_t> first_seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ManifestError(line_no, std::string("malformed record: ") + e.what());
    }
    auto rec = parse_record(j, line_no);
    if (const auto [it, fresh] = first_seen.emplace(rec.id, line_no); !fresh) {
      throw ManifestError(line_no, "duplicate id \"" + rec.id + "\" (first seen on line " +
                                       std::to_string(it->second) + ")");
    }
    records.push_back(std::move(rec));
  }
  return Corpus::from_records(std::move(records));
}

Corpus load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError(0, "cannot open manifest " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_manifest(os.str());
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw EmbeddingError("embedding dim must be positive");
  if (values_.size() != ids_.size() * dim_) {
    throw EmbeddingError("expected " + std::to_string(ids_.size() * dim_) + " values for " +
                         std::to_string(ids_.size()) + " x " + std::to_string(dim_) + ", got " +
                         std::to_string(values_.size()));
  }
  index_.reserve(ids_.size());
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    if (!index_.emplace(ids_[r], r).second) throw EmbeddingError("duplicate embedding id: " + ids_[r]);
    auto row = std::span<float>(values_.data() + r * dim_, dim_);
    double norm2 = 0.0;
    for (float v : row) {
      if (!std::isfinite(v)) throw EmbeddingError("non-finite value in row " + ids_[r]);
      norm2 += static_cast<double>(v) * static_cast<double>(v);
    }
    if (norm2 == 0.0) throw EmbeddingError("zero-norm row " + ids_[r]);
    const double inv = 1.0 / std::sqrt(norm2);
    for (float& v : row) v = static_cast<float>(static_cast<double>(v) * inv);
  }
}

std::optional<std::size_t> EmbeddingMatrix::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingMatrix::index_of(std::string_view id) const {
  const auto r = find(id);
  if (!r) throw UnknownIdError(std::string(id));
  return *r;
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "meta"));
  } catch (const nlohmann::json::parse_error& e) {
    throw EmbeddingError("bad meta file in " + dir.string() + ": " + e.what());
  }
  if (!meta.contains("dim") || !meta.contains("count") || !meta["dim"].is_number_unsigned() ||
      !meta["count"].is_number_unsigned()) {
    throw EmbeddingError("meta must carry unsigned integers \"dim\" and \"count\"");
  }
  const auto dim = meta["dim"].get<std::size_t>();
  const auto count = meta["count"].get<std::size_t>();

  std::vector<std::string> ids;
  {
    std::istringstream in(read_file(dir / "ids.txt"));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      ids.push_back(std::move(line));
    }
  }
  if (ids.size() != count) {
    throw EmbeddingError("ids.txt has " + std::to_string(ids.size()) + " ids, meta says " + std::to_string(count));
  }

  const std::string bytes = read_file(dir / "vecs.f32");
  if (bytes.size() != 4 * dim * count) {
    throw EmbeddingError("vecs.f32 has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(4 * dim * count));
  }
  std::vector<float> values(dim * count);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    values[i] = std::bit_cast<float>(bits);
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

void save_embeddings(const std::filesystem::path& dir, std::span<const std::string> ids, std::size_t dim,
                     std::span<const float> values) {
  if (values.size() != ids.size() * dim) throw EmbeddingError("value count does not match ids x dim");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "ids.txt", std::ios::binary);
    for (const auto& id : ids) out << id << '\n';
  }
  {
    std::ofstream out(dir / "vecs.f32", std::ios::binary);
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      char buf[4];
      std::memcpy(buf, &bits, 4);
      out.write(buf, 4);
    }
  }
  {
    std::ofstream out(dir / "meta", std::ios::binary);
    out << nlohmann::json{{"dim", dim}, {"count", ids.size()}}.dump() << '\n';
  }
}

EmbeddingMatrix load_embedding_records(const std::filesystem::path& file) {
  std::istringstream in(read_file(file));
  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw EmbeddingError(file.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("vec") || !j["vec"].is_array()) {
      throw EmbeddingError(file.string() + ": line " + std::to_string(line_no) + ": expected {\"id\", \"vec\"}");
    }
    const auto& vec = j["vec"];
    if (dim == 0) dim = vec.size();
    if (vec.size() != dim || dim == 0) {
      throw EmbeddingError(file.string() + ": line " + std::to_string(line_no) + ": inconsistent vector length");
    }
    ids.push_back(j["id"].get<std::string>());
    for (const auto& v : vec) {
      if (!v.is_number()) throw EmbeddingError(file.string() + ": line " + std::to_string(line_no) + ": non-numeric");
      values.push_back(v.get<float>());
    }
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

EmbeddingMatrix load_embeddings_any(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return load_embeddings(path);
  return load_embedding_records(path);
}

std::vector<RowScore> knn_rows(const EmbeddingMatrix& embeddings, std::size_t query_row, std::size_t k,
                               bool exclude_self, const std::vector<bool>& eligible) {
  const auto query = embeddings.row(query_row);
  const auto ids = embeddings.ids();
  std::vector<RowScore> scored;
  scored.reserve(embeddings.size());
  for (std::size_t r = 0; r < embeddings.size(); ++r) {
    if (exclude_self && r == query_row) continue;
    if (!eligible.empty() && !eligible[r]) continue;
    scored.push_back({r, dot(query, embeddings.row(r))});
  }
  const auto cmp = [&](const RowScore& a, const RowScore& b) {
    return ranks_before(a.score, ids[a.row], b.score, ids[b.row]);
  };
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), cmp);
  scored.resize(take);
  return scored;
}

std::vector<Neighbor> knn(const EmbeddingMatrix& embeddings, std::string_view query_id, std::size_t k,
                          bool exclude_self) {
  if (k == 0) throw InputError("knn: k must be >= 1");
  const auto row = embeddings.index_of(query_id);
  std::vector<Neighbor> out;
  for (const auto& rs : knn_rows(embeddings, row, k, exclude_self)) {
    out.push_back({embeddings.ids()[rs.row], rs.score});
  }
  return out;
}

ImageStore::ImageStore(Corpus corpus, EmbeddingMatrix embeddings, NegativeWindow window)
    : corpus_(std::move(corpus)), embeddings_(std::move(embeddings)), window_(window) {
  if (window_.lo < 2 || window_.lo > window_.hi) throw InputError("negative window must satisfy 2 <= lo <= hi");
  eligible_.assign(embeddings_.size(), false);
  // Pool order follows the manifest so anchor draws do not depend on the
  // embedding file layout.
  for (const auto& rec : corpus_.records()) {
    if (const auto r = embeddings_.find(rec.id)) {
      eligible_[*r] = true;
      pool_.push_back(*r);
    }
  }
  if (pool_.empty()) throw CorpusError("no corpus image has an embedding");
}

ImageTriple ImageStore::select(const SynthesisConfig& config) const {
  Rng rng(stream_seed(config.seed, Stream::kImages));
  const std::size_t anchor_row = pool_[rng.below(pool_.size())];
  ImageTriple triple;
  triple.anchor = embeddings_.ids()[anchor_row];
  if (!config.modality.doc_has_image()) return triple;

  if (pool_.size() < 3) {
    throw CorpusError("corpus has " + std::to_string(pool_.size()) +
                      " selectable images; document-side images need at least 3");
  }
  const std::size_t available = pool_.size() - 1;
  const std::size_t hi = std::min(window_.hi, available);
  const std::size_t lo = std::max<std::size_t>(2, std::min(window_.lo, hi));
  const auto ranked = knn_rows(embeddings_, anchor_row, hi, true, eligible_);
  triple.positive = embeddings_.ids()[ranked[0].row];
  const std::size_t rank = lo + rng.below(hi - lo + 1);
  triple.negative = embeddings_.ids()[ranked[rank - 1].row];
  return triple;
}

ImageTriple select_images(const SynthesisConfig& config, const EmbeddingMatrix& embeddings, const Corpus& corpus,
                          NegativeWindow window) {
  return ImageStore(corpus, embeddings, window).select(config);
}

DemoCorpus make_demo_corpus(std::size_t count, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageRecord> records;
  std::vector<std::string> ids;
  std::vector<float> values;
  records.reserve(count);
  values.reserve(count * dim);
  char buf[32];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof buf, "demo-%06zu", i);
    records.push_back({buf, std::string("demo://") + buf, std::nullopt, ImageStatus::kOk});
    ids.emplace_back(buf);
    for (std::size_t d = 0; d < dim; ++d) {
      // Box-Muller; 1 - u keeps the log argument in (0, 1].
      const double u1 = 1.0 - rng.uniform();
      const double u2 = rng.uniform();
      values.push_back(static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2)));
    }
  }
  return {Corpus::from_records(std::move(records)), EmbeddingMatrix(std::move(ids), dim, std::move(values))};
}

}  // namespace mmsynth
