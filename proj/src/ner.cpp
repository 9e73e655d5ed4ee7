#include "ctxhsd/ner.hpp"

#include <algorithm>
#include <cctype>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

std::string tag_type(std::string_view entity) {
  if (entity.size() > 2 && (entity[0] == 'B' || entity[0] == 'I') && entity[1] == '-')
    return std::string(entity.substr(2));
  return std::string(entity);
}

bool only_space_between(std::string_view text, std::size_t a, std::size_t b) {
  if (b < a) return false;
  for (std::size_t i = a; i < b && i < text.size(); ++i)
    if (!std::isspace(static_cast<unsigned char>(text[i]))) return false;
  return true;
}

}  // namespace

std::vector<EntityMention> merge_token_tags(std::string_view text, std::span<const TokenTag> tags) {
  std::vector<TokenTag> sorted(tags.begin(), tags.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const TokenTag& a, const TokenTag& b) { return a.begin < b.begin; });

  std::vector<EntityMention> out;
  double score_sum = 0.0;
  std::size_t pieces = 0;
  bool open = false;
  auto close = [&] {
    if (!open) return;
    auto& m = out.back();
    m.confidence = score_sum / static_cast<double>(pieces);
    m.surface = to_lower_ascii(text.substr(m.begin, m.end - m.begin));
    open = false;
  };

  for (const TokenTag& t : sorted) {
    if (t.end > text.size() || t.begin >= t.end) throw ValueError("token span outside text: " + t.word);
    if (t.entity == "O" || t.entity.empty()) {
      close();
      continue;
    }
    // Drop tokens overlapping what has already been emitted.
    if (!out.empty() && t.begin < out.back().end) continue;
    const std::string type = tag_type(t.entity);
    const bool continuation = t.word.rfind("##", 0) == 0;
    const bool inside = t.entity.rfind("I-", 0) == 0;
    if (open && out.back().tag == type &&
        ((continuation && t.begin == out.back().end) || (inside && only_space_between(text, out.back().end, t.begin)))) {
      out.back().end = t.end;
      score_sum += t.score;
      ++pieces;
      continue;
    }
    close();
    out.push_back({"", type, t.begin, t.end, 0.0});
    score_sum = t.score;
    pieces = 1;
    open = true;
  }
  close();
  return out;
}

std::vector<EntityMention> extract_entities(std::string_view text, NerBackend& backend) {
  if (trim(text).empty()) throw ValueError("entity extraction needs non-empty text");
  const auto tags = backend.tag(text);
  return merge_token_tags(text, tags);
}

std::string render_entities(std::span<const EntityMention> entities) {
  std::string out;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i) out += '\n';
    out += entities[i].surface + " (" + entities[i].tag + ")";
  }
  return out;
}

GazetteerNer GazetteerNer::load(const std::filesystem::path& path) {
  GazetteerNer g;
  std::size_t line_no = 0;
  for (const auto& line : split(read_file(path), '\n')) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto parts = split(t, '\t');
    if (parts.size() != 2) throw ValueError("gazetteer line needs phrase<TAB>TAG", static_cast<std::ptrdiff_t>(line_no));
    g.add(parts[0], std::string(trim(parts[1])));
  }
  return g;
}

void GazetteerNer::add(std::string_view phrase, std::string tag) {
  std::vector<std::string> toks;
  for (auto& t : normalized_tokens(phrase)) toks.push_back(t.text);
  if (toks.empty()) return;
  max_len_ = std::max(max_len_, toks.size());
  phrases_[join(toks, " ")] = std::move(tag);
}

std::vector<TokenTag> GazetteerNer::tag(std::string_view text) {
  const auto toks = normalized_tokens(text);
  std::vector<TokenTag> out;
  std::size_t i = 0;
  while (i < toks.size()) {
    bool matched = false;
    for (std::size_t n = std::min(max_len_, toks.size() - i); n >= 1; --n) {
      std::vector<std::string> window;
      for (std::size_t k = 0; k < n; ++k) window.push_back(toks[i + k].text);
      auto it = phrases_.find(join(window, " "));
      if (it == phrases_.end()) continue;
      for (std::size_t k = 0; k < n; ++k) {
        const auto& tk = toks[i + k];
        out.push_back({std::string(text.substr(tk.begin, tk.end - tk.begin)), (k == 0 ? "B-" : "I-") + it->second,
                       tk.begin, tk.end, 1.0});
      }
      i += n;
      matched = true;
      break;
    }
    if (!matched) {
      out.push_back({std::string(text.substr(toks[i].begin, toks[i].end - toks[i].begin)), "O", toks[i].begin,
                     toks[i].end, 1.0});
      ++i;
    }
  }
  return out;
}

}  // namespace ctxhsd
