#include "ctxhsd/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/rng.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

constexpr std::array<std::string_view, kFineLabelCount> kFineNames = {
    "white_grievance", "incitement", "stereotypical", "inferiority", "irony", "threatening", "other"};
constexpr std::array<std::string_view, kMisogynyLabelCount> kMisogynyNames = {
    "shaming", "stereotype", "objectification", "violence"};

struct TsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name, const std::string& where) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError(std::string(name), where);
  }
};

std::string unquote(std::string_view field) {
  if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
    std::string out;
    field = field.substr(1, field.size() - 2);
    for (std::size_t i = 0; i < field.size(); ++i) {
      out.push_back(field[i]);
      if (field[i] == '"' && i + 1 < field.size() && field[i + 1] == '"') ++i;
    }
    return out;
  }
  return std::string(field);
}

TsvTable read_tsv(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  TsvTable t;
  std::size_t pos = 0;
  bool first = true;
  if (raw.size() >= 3 && static_cast<unsigned char>(raw[0]) == 0xEF &&
      static_cast<unsigned char>(raw[1]) == 0xBB && static_cast<unsigned char>(raw[2]) == 0xBF)
    pos = 3;
  while (pos < raw.size()) {
    auto nl = raw.find('\n', pos);
    if (nl == std::string::npos) nl = raw.size();
    std::string_view line(raw.data() + pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    for (auto& f : fields) f = unquote(f);
    if (first) {
      for (auto& f : fields) f = std::string(trim(f));
      t.header = std::move(fields);
      first = false;
    } else {
      t.rows.push_back(std::move(fields));
    }
  }
  if (first) throw SchemaError("header", path.string());
  return t;
}

const std::string& field(const std::vector<std::string>& row, std::size_t col, std::size_t row_index) {
  static const std::string kEmpty;
  if (col >= row.size()) {
    if (col == row.size()) return kEmpty;  // trailing empty column dropped by some writers
    throw ValueError("row has " + std::to_string(row.size()) + " fields", static_cast<std::ptrdiff_t>(row_index));
  }
  return row[col];
}

int parse_bit(std::string_view s, std::string_view column, std::size_t row) {
  auto t = trim(s);
  if (t == "0") return 0;
  if (t == "1") return 1;
  throw ValueError("label '" + std::string(t) + "' in column " + std::string(column) + " is not 0 or 1",
                   static_cast<std::ptrdiff_t>(row));
}

}  // namespace

std::vector<MisogynyLabel> LabelSet::labels() const {
  std::vector<MisogynyLabel> out;
  for (int i = 0; i < static_cast<int>(kMisogynyLabelCount); ++i)
    if (bits_ & (1u << i)) out.push_back(static_cast<MisogynyLabel>(i));
  return out;
}

std::string_view to_string(CorpusName c) { return c == CorpusName::mami ? "mami" : "latent_hatred"; }
std::string_view to_string(BinaryLabel l) { return l == BinaryLabel::positive ? "positive" : "negative"; }
std::string_view to_string(FineLabel l) { return kFineNames[static_cast<std::size_t>(l)]; }
std::string_view to_string(MisogynyLabel l) { return kMisogynyNames[static_cast<std::size_t>(l)]; }

CorpusName parse_corpus_name(std::string_view s) {
  if (s == "latent_hatred") return CorpusName::latent_hatred;
  if (s == "mami") return CorpusName::mami;
  throw ConfigError("unknown corpus '" + std::string(s) + "'");
}

std::optional<FineLabel> parse_fine_label(std::string_view token) {
  const auto t = to_lower_ascii(trim(token));
  for (std::size_t i = 0; i < kFineNames.size(); ++i)
    if (t == kFineNames[i]) return static_cast<FineLabel>(i);
  return std::nullopt;
}

std::optional<MisogynyLabel> parse_misogyny_label(std::string_view token) {
  const auto t = to_lower_ascii(trim(token));
  for (std::size_t i = 0; i < kMisogynyNames.size(); ++i)
    if (t == kMisogynyNames[i]) return static_cast<MisogynyLabel>(i);
  return std::nullopt;
}

void Corpus::validate() const {
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Post& p = items[i];
    const auto row = static_cast<std::ptrdiff_t>(i);
    if (!ids.insert(p.id).second) throw ValueError("duplicate id " + p.id, row);
    if (p.fine_label && (name != CorpusName::latent_hatred || p.binary_label != BinaryLabel::positive))
      throw ValueError("fine label on a non-implicit item " + p.id, row);
    if (p.multi_labels.has_value() != (name == CorpusName::mami))
      throw ValueError("multi-label field presence does not match corpus for " + p.id, row);
    if (p.multi_labels && p.binary_label == BinaryLabel::negative && !p.multi_labels->empty())
      throw ValueError("non-misogynous meme " + p.id + " carries sub-labels", row);
  }
}

Corpus load_latent_hatred(const std::filesystem::path& path) {
  const TsvTable t = read_tsv(path);
  const std::string where = path.string();
  const auto c_post = t.column("post", where);
  const auto c_class = t.column("class", where);
  const auto c_implicit = t.column("implicit_class", where);

  Corpus corpus;
  corpus.name = CorpusName::latent_hatred;
  corpus.provenance[path.filename().string()] = sha256_file(path);
  corpus.items.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    Post p;
    p.id = "lh-" + std::to_string(r + 1);
    p.text = field(row, c_post, r + 1);
    const std::string cls = to_lower_ascii(trim(field(row, c_class, r + 1)));
    const std::string implicit = std::string(trim(field(row, c_implicit, r + 1)));
    bool is_implicit = false;
    if (cls == "not_hate") {
      p.binary_label = BinaryLabel::negative;
    } else if (cls == "implicit_hate" || cls == "implicit") {
      p.binary_label = BinaryLabel::positive;
      is_implicit = true;
    } else if (cls == "explicit_hate" || cls == "explicit") {
      p.binary_label = BinaryLabel::positive;
    } else {
      throw ValueError("unknown class token '" + cls + "'", static_cast<std::ptrdiff_t>(r + 1));
    }
    const std::string imp_lower = to_lower_ascii(implicit);
    if (!implicit.empty() && imp_lower != "na" && imp_lower != "none" && imp_lower != "nan") {
      auto fine = parse_fine_label(implicit);
      if (!fine) throw ValueError("unknown implicit_class token '" + implicit + "'", static_cast<std::ptrdiff_t>(r + 1));
      if (!is_implicit)
        throw ValueError("implicit_class given for class '" + cls + "'", static_cast<std::ptrdiff_t>(r + 1));
      p.fine_label = fine;
    }
    corpus.items.push_back(std::move(p));
  }
  corpus.validate();
  return corpus;
}

Corpus deduplicate_by_image(const Corpus& corpus, std::vector<std::string>* dropped) {
  Corpus out;
  out.name = corpus.name;
  out.provenance = corpus.provenance;
  std::unordered_set<std::string> seen;
  for (const Post& p : corpus.items) {
    if (!p.image_ref) {
      out.items.push_back(p);
      continue;
    }
    if (seen.insert(sha256_file(*p.image_ref)).second) {
      out.items.push_back(p);
    } else if (dropped) {
      dropped->push_back(p.id);
    }
  }
  return out;
}

Corpus load_mami(const std::filesystem::path& dir, const std::filesystem::path& annotations,
                 MamiLoadReport* report) {
  namespace fs = std::filesystem;
  fs::path table = annotations;
  if (table.empty()) {
    for (const char* candidate : {"annotations.tsv", "training.csv", "train.tsv"}) {
      if (fs::exists(dir / candidate)) {
        table = dir / candidate;
        break;
      }
    }
    if (table.empty()) throw InputError("no annotation table found in " + dir.string());
  } else if (table.is_relative() && !fs::exists(table)) {
    table = dir / table;
  }

  const TsvTable t = read_tsv(table);
  const std::string where = table.string();
  const auto c_file = t.column("file_name", where);
  const auto c_mis = t.column("misogynous", where);
  const std::array<std::size_t, kMisogynyLabelCount> c_sub = {
      t.column("shaming", where), t.column("stereotype", where), t.column("objectification", where),
      t.column("violence", where)};
  const auto c_text = t.column("Text Transcription", where);

  const fs::path image_dir = fs::is_directory(dir / "images") ? dir / "images" : dir;

  Corpus raw;
  raw.name = CorpusName::mami;
  raw.provenance[table.filename().string()] = sha256_file(table);
  std::vector<std::string> missing;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string file = std::string(trim(field(row, c_file, r + 1)));
    Post p;
    p.id = fs::path(file).stem().string();
    p.text = field(row, c_text, r + 1);
    const int mis = parse_bit(field(row, c_mis, r + 1), "misogynous", r + 1);
    p.binary_label = mis ? BinaryLabel::positive : BinaryLabel::negative;
    LabelSet labels;
    for (std::size_t k = 0; k < kMisogynyLabelCount; ++k) {
      if (parse_bit(field(row, c_sub[k], r + 1), kMisogynyNames[k], r + 1))
        labels.add(static_cast<MisogynyLabel>(k));
    }
    if (!mis && !labels.empty())
      throw ValueError("non-misogynous meme " + p.id + " has sub-labels", static_cast<std::ptrdiff_t>(r + 1));
    p.multi_labels = labels;
    const fs::path image = image_dir / file;
    if (!fs::exists(image)) missing.push_back(p.id);
    p.image_ref = image;
    raw.items.push_back(std::move(p));
  }
  if (!missing.empty())
    throw IntegrityError(std::to_string(missing.size()) + " annotation rows reference missing images", missing);

  std::vector<std::string> dropped;
  Corpus out = deduplicate_by_image(raw, &dropped);
  if (!dropped.empty()) spdlog::info("mami: dropped {} duplicate memes", dropped.size());
  if (report) {
    report->raw_rows = raw.items.size();
    report->duplicate_ids = dropped;
  }
  out.validate();
  return out;
}

std::string stratum_key(const Corpus& corpus, const Post& post) {
  std::string key(to_string(post.binary_label));
  if (corpus.name == CorpusName::latent_hatred) {
    key += '/';
    key += post.fine_label ? to_string(*post.fine_label) : std::string_view("-");
  }
  return key;
}

SplitPair stratified_split(const Corpus& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("split ratio must lie in (0, 1)");

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < corpus.items.size(); ++i)
    strata[stratum_key(corpus, corpus.items[i])].push_back(i);

  SplitPair out;
  out.ratio = ratio;
  out.seed = seed;
  std::vector<bool> in_train(corpus.items.size(), false);
  Rng rng(derive_seed(seed, 0x5711));
  for (auto& [key, members] : strata) {
    // Sort by id first so the partition depends on content, not file order.
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return corpus.items[a].id < corpus.items[b].id; });
    rng.shuffle(std::span<std::size_t>(members));
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(members.size()) + 0.5));
    if (members.size() == 1) {
      spdlog::warn("stratum '{}' has a single item; assigning it to train", key);
      out.singleton_strata.push_back(key);
      n_train = 1;
    }
    for (std::size_t k = 0; k < n_train; ++k) in_train[members[k]] = true;
  }

  out.train.name = out.test.name = corpus.name;
  out.train.provenance = out.test.provenance = corpus.provenance;
  for (std::size_t i = 0; i < corpus.items.size(); ++i)
    (in_train[i] ? out.train : out.test).items.push_back(corpus.items[i]);
  return out;
}

std::string split_manifest_jsonl(const SplitPair& split, const Corpus& source) {
  std::unordered_set<std::string> train_ids;
  for (const auto& p : split.train.items) train_ids.insert(p.id);
  std::string out;
  for (const auto& p : source.items) {
    nlohmann::json line = {{"id", p.id}, {"partition", train_ids.count(p.id) ? "train" : "test"}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

SplitPair apply_split_manifest(const Corpus& corpus, std::string_view manifest, double ratio,
                               std::uint64_t seed) {
  std::unordered_map<std::string, bool> train;
  for (const auto& line : split(manifest, '\n')) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    train[j.at("id").get<std::string>()] = j.at("partition").get<std::string>() == "train";
  }
  SplitPair out;
  out.ratio = ratio;
  out.seed = seed;
  out.train.name = out.test.name = corpus.name;
  std::vector<std::string> unknown;
  for (const auto& p : corpus.items) {
    auto it = train.find(p.id);
    if (it == train.end()) {
      unknown.push_back(p.id);
      continue;
    }
    (it->second ? out.train : out.test).items.push_back(p);
  }
  if (!unknown.empty()) throw IntegrityError("posts absent from split manifest", unknown);
  return out;
}

double LevelStats::proportion(std::string_view label) const {
  return denominator ? static_cast<double>(count(label)) / static_cast<double>(denominator) : 0.0;
}

std::size_t LevelStats::count(std::string_view label) const {
  for (const auto& [name, n] : counts)
    if (name == label) return n;
  return 0;
}

const LevelStats* CorpusStats::level(std::string_view name) const {
  for (const auto& l : levels)
    if (l.level == name) return &l;
  return nullptr;
}

std::string CorpusStats::to_table() const {
  std::ostringstream ss;
  ss << "corpus: " << to_string(corpus) << "  items: " << total << "\n";
  for (const auto& l : levels) {
    ss << "\n[" << l.level << "] n=" << l.denominator << "\n";
    std::size_t width = 10;
    for (const auto& [name, n] : l.counts) width = std::max(width, name.size() + 2);
    ss << std::left << std::setw(12) << "";
    for (const auto& [name, n] : l.counts) ss << std::setw(static_cast<int>(width)) << name;
    ss << "\n" << std::setw(12) << "Count";
    for (const auto& [name, n] : l.counts) ss << std::setw(static_cast<int>(width)) << n;
    ss << "\n" << std::setw(12) << "Occurrence";
    for (const auto& [name, n] : l.counts) ss << std::setw(static_cast<int>(width)) << format_percent(l.proportion(name), 2);
    ss << "\n";
  }
  return ss.str();
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.corpus = corpus.name;
  s.total = corpus.items.size();

  LevelStats binary{"binary", corpus.items.size(), {{"negative", 0}, {"positive", 0}}};
  for (const auto& p : corpus.items) binary.counts[static_cast<int>(p.binary_label)].second++;
  s.levels.push_back(binary);

  if (corpus.name == CorpusName::latent_hatred) {
    LevelStats fine{"implicit_class", 0, {}};
    for (auto n : kFineNames) fine.counts.emplace_back(std::string(n), 0);
    for (const auto& p : corpus.items) {
      if (!p.fine_label) continue;
      fine.counts[static_cast<std::size_t>(*p.fine_label)].second++;
      fine.denominator++;
    }
    s.levels.push_back(fine);
  } else {
    LevelStats sub{"misogyny_sublabel", 0, {}};
    for (auto n : kMisogynyNames) sub.counts.emplace_back(std::string(n), 0);
    for (const auto& p : corpus.items) {
      if (p.binary_label != BinaryLabel::positive) continue;
      sub.denominator++;
      if (!p.multi_labels) continue;
      for (auto l : p.multi_labels->labels()) sub.counts[static_cast<std::size_t>(l)].second++;
    }
    s.levels.push_back(sub);
  }
  return s;
}

Corpus implicit_subset(const Corpus& corpus) {
  Corpus out;
  out.name = corpus.name;
  out.provenance = corpus.provenance;
  for (const auto& p : corpus.items)
    if (p.fine_label) out.items.push_back(p);
  return out;
}

}  // namespace ctxhsd
