#include "cicr/textkit.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cicr/numerics/checkpoint.hpp"
#include "cicr/rng.hpp"

namespace cicr::text {

Lexicon Lexicon::default_lexicon() {
  Lexicon lex;
  lex.subjects = {"person"};
  lex.actions = {"chop", "peel", "slice", "wash"};
  lex.objects = {"apple", "carrot", "kiwi", "onion", "potato"};
  lex.ordinals = {"first", "second", "third", "fourth"};
  lex.action_inflections = {{"chops", "chop"}, {"peels", "peel"}, {"slices", "slice"}, {"washes", "wash"}};
  lex.object_plurals = {
      {"apples", "apple"}, {"carrots", "carrot"}, {"kiwis", "kiwi"}, {"onions", "onion"}, {"potatoes", "potato"}};
  return lex;
}

void Lexicon::validate() const {
  std::set<std::string> seen;
  auto claim = [&](const std::string& w, const char* list) {
    if (!seen.insert(w).second) throw TextError(std::string("lexicon word '") + w + "' repeated (in " + list + ")");
  };
  for (const auto& w : subjects) claim(w, "subjects");
  for (const auto& w : actions) claim(w, "actions");
  for (const auto& w : objects) claim(w, "objects");
  for (const auto& w : ordinals) claim(w, "ordinals");
  for (const auto& [form, lemma] : action_inflections) {
    if (std::find(actions.begin(), actions.end(), lemma) == actions.end())
      throw TextError("inflection '" + form + "' maps to unknown action '" + lemma + "'");
    if (form != lemma) claim(form, "action inflections");
  }
  for (const auto& [form, lemma] : object_plurals) {
    if (std::find(objects.begin(), objects.end(), lemma) == objects.end())
      throw TextError("plural '" + form + "' maps to unknown object '" + lemma + "'");
    if (form != lemma) claim(form, "object plurals");
  }
}

const std::string& Lexicon::inflect(const std::string& action) const {
  for (const auto& [form, lemma] : action_inflections)
    if (lemma == action) return form;
  throw TextError("no inflection for action '" + action + "'");
}

const std::string& Lexicon::plural(const std::string& object) const {
  for (const auto& [form, lemma] : object_plurals)
    if (lemma == object) return form;
  throw TextError("no plural for object '" + object + "'");
}

std::vector<std::string> tokenize(std::string_view query_text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : query_text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  if (tokens.empty()) throw EmptyQueryError();
  return tokens;
}

SvoTuple extract_svo(const std::vector<std::string>& tokens, const Lexicon& lexicon) {
  if (tokens.empty()) throw EmptyQueryError();
  auto contains = [](const std::vector<std::string>& list, const std::string& w) {
    return std::find(list.begin(), list.end(), w) != list.end();
  };

  SvoTuple out;
  for (const auto& t : tokens) {
    if (contains(lexicon.subjects, t)) {
      out.subject = t;
      break;
    }
  }
  if (out.subject.empty()) throw ExtractionError("subject");

  std::size_t action_pos = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (contains(lexicon.actions, tokens[i])) {
      out.action = tokens[i];
    } else if (auto it = lexicon.action_inflections.find(tokens[i]); it != lexicon.action_inflections.end()) {
      out.action = it->second;
    } else {
      continue;
    }
    action_pos = i;
    break;
  }
  if (out.action.empty()) throw ExtractionError("action");

  for (std::size_t i = action_pos + 1; i < tokens.size(); ++i) {
    if (contains(lexicon.objects, tokens[i])) {
      out.object = tokens[i];
    } else if (auto it = lexicon.object_plurals.find(tokens[i]); it != lexicon.object_plurals.end()) {
      out.object = it->second;
    } else {
      continue;
    }
    break;
  }
  if (out.object.empty()) throw ExtractionError("object");
  return out;
}

std::vector<std::string> ConfounderDictionary::entry_labels() const {
  std::vector<std::string> out;
  for (const auto& w : subjects) out.push_back("subject:" + w);
  for (const auto& w : actions) out.push_back("action:" + w);
  for (const auto& w : objects) out.push_back("object:" + w);
  return out;
}

ConfounderDictionary build_dictionary(const std::vector<SvoTuple>& corpus, std::size_t embed_dim, std::uint64_t seed) {
  if (corpus.empty()) throw TextError("cannot build a confounder dictionary from an empty corpus");
  if (embed_dim == 0) throw TextError("embedding dimension must be positive");

  std::map<std::string, std::size_t> subj, act, obj;
  for (const auto& t : corpus) {
    ++subj[t.subject];
    ++act[t.action];
    ++obj[t.object];
  }

  ConfounderDictionary dict;
  const double total = 3.0 * static_cast<double>(corpus.size());
  auto append = [&](const std::map<std::string, std::size_t>& counts, std::vector<std::string>& vocab) {
    for (const auto& [word, n] : counts) {  // std::map iterates in lexicographic order
      vocab.push_back(word);
      dict.prior.push_back(static_cast<double>(n) / total);
    }
  };
  append(subj, dict.subjects);
  append(act, dict.actions);
  append(obj, dict.objects);

  Rng rng(derive_seed(seed, 0xD1C7));
  std::vector<double> values(dict.size() * embed_dim);
  for (double& v : values) v = rng.normal();
  dict.embeddings = num::Tensor::matrix(dict.size(), embed_dim, std::move(values));
  return dict;
}

void save_dictionary(const ConfounderDictionary& dict, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "dictionary.txt");
  if (!out) throw TextError("cannot write " + (dir / "dictionary.txt").string());
  out << "# confounder dictionary: role word prior\n";
  out << "K " << dict.size() << "\n";
  out << "L_s " << dict.subjects.size() << "\n";
  out << "L_a " << dict.actions.size() << "\n";
  out << "L_o " << dict.objects.size() << "\n";
  out << "embed_dim " << dict.embed_dim() << "\n";
  std::size_t k = 0;
  auto emit = [&](const char* role, const std::vector<std::string>& words) {
    for (const auto& w : words) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.12g", dict.prior[k++]);
      out << role << " " << w << " " << buf << "\n";
    }
  };
  emit("subject", dict.subjects);
  emit("action", dict.actions);
  emit("object", dict.objects);

  num::write_checkpoint(dir / "dictionary.ckpt",
                        {{"dict.embeddings", dict.embeddings.detach()}, {"dict.prior", num::Tensor::vector(dict.prior)}});
}

ConfounderDictionary load_dictionary(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dictionary.txt");
  if (!in) throw TextError("cannot read " + (dir / "dictionary.txt").string());
  ConfounderDictionary dict;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag, word;
    ls >> tag;
    if (tag == "subject" || tag == "action" || tag == "object") {
      if (!(ls >> word)) throw TextError("dictionary.txt:" + std::to_string(lineno) + ": missing word");
      (tag == "subject" ? dict.subjects : tag == "action" ? dict.actions : dict.objects).push_back(word);
    }
  }
  const auto entries = num::read_checkpoint(dir / "dictionary.ckpt");
  for (const auto& e : entries) {
    if (e.name == "dict.embeddings") dict.embeddings = e.value;
    if (e.name == "dict.prior") dict.prior.assign(e.value.values().begin(), e.value.values().end());
  }
  if (dict.prior.size() != dict.size() || dict.embeddings.rank() != 2 || dict.embeddings.rows() != dict.size())
    throw TextError("dictionary files in " + dir.string() + " are inconsistent");
  return dict;
}

}  // namespace cicr::text
