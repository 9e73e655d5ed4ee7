#include "ctxhsd/linkers.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '?' && c != '!') continue;
    const bool at_end = i + 1 == text.size();
    if (!at_end && !std::isspace(static_cast<unsigned char>(text[i + 1]))) continue;
    auto s = trim(text.substr(start, i + 1 - start));
    if (!s.empty()) out.emplace_back(s);
    start = i + 1;
  }
  auto rest = trim(text.substr(std::min(start, text.size())));
  if (!rest.empty()) out.emplace_back(rest);
  return out;
}

std::string first_two_sentences(std::string_view text) {
  auto sentences = split_sentences(text);
  if (sentences.size() > 2) sentences.resize(2);
  return join(sentences, " ");
}

namespace {

std::vector<std::string> token_texts(std::string_view s) {
  std::vector<std::string> out;
  for (auto& t : normalized_tokens(s)) out.push_back(std::move(t.text));
  return out;
}

}  // namespace

FixtureLinker FixtureLinker::from_json(std::string_view json_text) {
  FixtureLinker f;
  const auto j = nlohmann::json::parse(json_text);
  for (const auto& [surface, entry] : j.items())
    f.add(surface, {entry.at("title").get<std::string>(), entry.at("summary").get<std::string>()});
  return f;
}

FixtureLinker FixtureLinker::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

void FixtureLinker::add(std::string_view surface, Entry entry) {
  auto toks = token_texts(surface);
  if (toks.empty()) return;
  max_len_ = std::max(max_len_, toks.size());
  entry.summary = first_two_sentences(entry.summary);
  entries_[join(toks, " ")] = std::move(entry);
}

std::vector<LinkedEntity> FixtureLinker::link(std::string_view text) {
  const auto toks = normalized_tokens(text);
  std::vector<LinkedEntity> out;
  std::unordered_set<std::string> seen_titles;
  std::size_t i = 0;
  while (i < toks.size()) {
    std::size_t advance = 1;
    for (std::size_t n = std::min(max_len_, toks.size() - i); n >= 1; --n) {
      std::vector<std::string> window;
      for (std::size_t k = 0; k < n; ++k) window.push_back(toks[i + k].text);
      auto it = entries_.find(join(window, " "));
      if (it == entries_.end()) continue;
      if (seen_titles.insert(it->second.title).second) {
        const std::size_t b = toks[i].begin, e = toks[i + n - 1].end;
        out.push_back({std::string(text.substr(b, e - b)), it->second.title, it->second.summary});
      }
      advance = n;
      break;
    }
    i += advance;
  }
  return out;
}

std::string rel_augment(std::string_view post_text, std::span<const LinkedEntity> links) {
  if (links.empty()) return std::string(post_text);
  std::string out(post_text);
  out += " [SEP] ";
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (i) out += ' ';
    out += links[i].summary;
  }
  return out;
}

ConceptTable ConceptTable::from_text(std::string_view text, std::size_t expected_dim) {
  ConceptTable t;
  t.dim_ = expected_dim;
  std::size_t pos = 0, line_no = 0;
  bool first = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    auto fields = whitespace_tokens(line);
    if (first) {
      first = false;
      if (fields.size() == 2) {
        std::size_t a = 0, b = 0;
        auto r1 = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), a);
        auto r2 = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), b);
        if (r1.ec == std::errc() && r2.ec == std::errc()) {
          if (b != expected_dim)
            throw ValueError("concept table dimension " + std::to_string(b) + " != " + std::to_string(expected_dim));
          continue;
        }
      }
    }
    if (fields.size() != expected_dim + 1)
      throw ValueError("concept row has " + std::to_string(fields.size() - 1) + " components, expected " +
                           std::to_string(expected_dim),
                       static_cast<std::ptrdiff_t>(line_no));
    std::string key = fields[0];
    if (key.rfind("/c/", 0) == 0) {
      auto parts = split(key, '/');  // "", "c", lang, term, ...
      if (parts.size() < 4) throw ValueError("bad concept key " + key, static_cast<std::ptrdiff_t>(line_no));
      if (parts[2] != "en") continue;
      key = parts[3];
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(expected_dim));
    for (std::size_t k = 0; k < expected_dim; ++k) {
      const auto& f = fields[k + 1];
      double x = 0.0;
      auto res = std::from_chars(f.data(), f.data() + f.size(), x);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ValueError("non-numeric component '" + f + "'", static_cast<std::ptrdiff_t>(line_no));
      v[static_cast<Eigen::Index>(k)] = x;
    }
    t.table_[to_lower_ascii(key)] = std::move(v);
  }
  return t;
}

ConceptTable ConceptTable::load(const std::filesystem::path& path, std::size_t expected_dim) {
  return from_text(read_file(path), expected_dim);
}

void ConceptTable::add(std::string key, Eigen::VectorXd vec) {
  if (static_cast<std::size_t>(vec.size()) != dim_) throw ContractError("concept vector has wrong length");
  table_[to_lower_ascii(key)] = std::move(vec);
}

const Eigen::VectorXd* ConceptTable::find(std::string_view key) const {
  auto it = table_.find(std::string(key));
  return it == table_.end() ? nullptr : &it->second;
}

std::vector<ConceptMatch> match_concepts(std::string_view text, const ConceptTable& table) {
  const auto toks = token_texts(text);
  std::vector<ConceptMatch> out;
  std::size_t i = 0;
  while (i < toks.size()) {
    bool hit = false;
    for (std::size_t n = std::min<std::size_t>(3, toks.size() - i); n >= 1; --n) {
      std::vector<std::string> window(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n));
      std::string key = join(window, "_");
      if (table.find(key)) {
        out.push_back({i, n, std::move(key)});
        i += n;
        hit = true;
        break;
      }
    }
    if (!hit) ++i;
  }
  return out;
}

Eigen::VectorXd conceptnet_vector(std::string_view text, const ConceptTable& table) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim()));
  const auto matches = match_concepts(text, table);
  if (matches.empty()) return acc;
  for (const auto& m : matches) acc += *table.find(m.key);
  acc /= static_cast<double>(matches.size());
  const double norm = acc.norm();
  if (norm > 0.0) acc /= norm;
  return acc;
}

}  // namespace ctxhsd
