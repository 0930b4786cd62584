#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cicr/numerics/tensor.hpp"

namespace cicr::text {

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyQueryError : public TextError {
 public:
  EmptyQueryError() : TextError("empty query") {}
};

class ExtractionError : public TextError {
 public:
  explicit ExtractionError(std::string role)
      : TextError("could not extract " + role + " from query"), role_(std::move(role)) {}
  const std::string& role() const { return role_; }

 private:
  std::string role_;
};

// Closed vocabulary of the query grammar.
struct Lexicon {
  std::vector<std::string> subjects;
  std::vector<std::string> actions;
  std::vector<std::string> objects;
  std::vector<std::string> ordinals;
  std::map<std::string, std::string> action_inflections;  // "washes" -> "wash"
  std::map<std::string, std::string> object_plurals;      // "kiwis" -> "kiwi"

  // 1 subject, 4 actions, 5 objects, 4 ordinals.
  static Lexicon default_lexicon();

  // Throws TextError if the word lists overlap or an inflection points outside its list.
  void validate() const;

  const std::string& inflect(const std::string& action) const;  // third-person singular form
  const std::string& plural(const std::string& object) const;
};

struct SvoTuple {
  std::string subject;
  std::string action;
  std::string object;

  auto operator<=>(const SvoTuple&) const = default;
};

// Lowercases, drops punctuation, splits on whitespace.
std::vector<std::string> tokenize(std::string_view query_text);

// subject = first subject token; action = lemma of the first action token;
// object = first object token after the action. Ordinals and determiners are ignored.
SvoTuple extract_svo(const std::vector<std::string>& tokens, const Lexicon& lexicon);

// Z = [Z_s; Z_a; Z_o] with one embedding row per entry and the empirical prior P(z)
// over the concatenated dictionary.
struct ConfounderDictionary {
  std::vector<std::string> subjects;
  std::vector<std::string> actions;
  std::vector<std::string> objects;
  num::Tensor embeddings;  // K x D
  std::vector<double> prior;

  std::size_t size() const { return subjects.size() + actions.size() + objects.size(); }
  std::size_t embed_dim() const { return embeddings.cols(); }
  // "subject:person", "action:wash", ... in dictionary order.
  std::vector<std::string> entry_labels() const;
};

ConfounderDictionary build_dictionary(const std::vector<SvoTuple>& corpus, std::size_t embed_dim, std::uint64_t seed);

// dictionary.txt (role-tagged words with priors) and dictionary.ckpt (embeddings + exact prior).
void save_dictionary(const ConfounderDictionary& dict, const std::filesystem::path& dir);
ConfounderDictionary load_dictionary(const std::filesystem::path& dir);

}  // namespace cicr::text
