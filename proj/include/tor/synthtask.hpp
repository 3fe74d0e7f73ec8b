#pragma once

// ShapeCount: a seeded, verifiable grid-counting task. Each sample is a small
// grid of symbols, a tokenized question (COUNT s, or COMPARE a b), and the
// canonical answer string. Rewards are binary: a response scores 1 iff it
// carries exactly one well-formed answer span matching the ground truth.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tor/errors.hpp"
#include "tor/rng.hpp"

namespace tor::task {

// Fixed token layout: control and question tokens first, then the ten digits,
// then one token per alphabet symbol ("S1".."SA").
struct Vocabulary {
  int alphabetSize = 0;

  static constexpr int pad = 0;
  static constexpr int eos = 1;
  static constexpr int answerStart = 2;
  static constexpr int answerEnd = 3;
  static constexpr int questionCount = 4;
  static constexpr int questionCompare = 5;
  static constexpr int digitBase = 6;
  static constexpr int symbolBase = 16;

  int size() const { return symbolBase + alphabetSize; }

  int digitToken(int digit) const { return digitBase + digit; }
  bool isDigit(int id) const { return id >= digitBase && id < digitBase + 10; }
  int digitValue(int id) const { return id - digitBase; }

  // Symbols are numbered 1..alphabetSize; 0 is the empty (PAD) cell.
  int symbolToken(int symbol) const { return symbolBase + symbol - 1; }
  bool isSymbol(int id) const { return id >= symbolBase && id < size(); }
  int symbolValue(int id) const { return id - symbolBase + 1; }

  static std::string symbolName(int symbol) { return "S" + std::to_string(symbol); }

  std::string tokenName(int id) const {
    switch (id) {
      case pad: return "PAD";
      case eos: return "EOS";
      case answerStart: return "ANS_START";
      case answerEnd: return "ANS_END";
      case questionCount: return "COUNT";
      case questionCompare: return "COMPARE";
      default: break;
    }
    if (isDigit(id)) {
      return std::string(1, static_cast<char>('0' + digitValue(id)));
    }
    if (isSymbol(id)) {
      return symbolName(symbolValue(id));
    }
    return "?" + std::to_string(id);
  }
};

enum class QuestionFamilies { count, compare, both };

inline const char* questionFamiliesName(QuestionFamilies f) {
  switch (f) {
    case QuestionFamilies::count: return "count";
    case QuestionFamilies::compare: return "compare";
    case QuestionFamilies::both: return "both";
  }
  return "?";
}

inline QuestionFamilies questionFamiliesFromName(const std::string& name) {
  if (name == "count") return QuestionFamilies::count;
  if (name == "compare") return QuestionFamilies::compare;
  if (name == "both") return QuestionFamilies::both;
  throw ConfigError("unknown question family '" + name + "' (count | compare | both)");
}

struct TaskConfig {
  int gridHeight = 3;
  int gridWidth = 3;
  int alphabetSize = 4;
  QuestionFamilies questionFamilies = QuestionFamilies::count;
  int maxAnswer = 64;

  int cellCount() const { return gridHeight * gridWidth; }

  void validate() const {
    if (gridHeight < 1 || gridWidth < 1) {
      throw ConfigError("grid dimensions must be at least 1x1");
    }
    if (cellCount() > 64) {
      throw ConfigError("grid has " + std::to_string(cellCount()) +
                        " cells, the limit is 64");
    }
    if (alphabetSize < 2) {
      throw ConfigError("alphabetSize must be at least 2");
    }
    if (maxAnswer < cellCount()) {
      throw ConfigError("maxAnswer must cover the largest possible count (" +
                        std::to_string(cellCount()) + ")");
    }
  }

  Vocabulary vocabulary() const { return Vocabulary{alphabetSize}; }
};

// Grid cells are stored row-major; 0 means the cell is empty (PAD), values
// 1..alphabetSize name symbols.
struct SyntheticSample {
  std::uint64_t seed = 0;
  int gridHeight = 0;
  int gridWidth = 0;
  std::vector<int> grid;
  std::vector<int> question;
  std::string answer;

  bool operator==(const SyntheticSample&) const = default;
};

inline std::vector<int> placeholderGrid(const TaskConfig& config) {
  return std::vector<int>(static_cast<std::size_t>(config.cellCount()), Vocabulary::pad);
}

// Applies the task rule to a grid and a tokenized question.
inline std::string answerFor(std::span<const int> grid, std::span<const int> question,
                             const Vocabulary& vocab) {
  auto countOf = [&grid](int symbol) {
    int count = 0;
    for (int cell : grid) {
      count += (cell == symbol) ? 1 : 0;
    }
    return count;
  };
  if (question.size() == 2 && question[0] == Vocabulary::questionCount) {
    return std::to_string(countOf(vocab.symbolValue(question[1])));
  }
  if (question.size() == 3 && question[0] == Vocabulary::questionCompare) {
    int a = vocab.symbolValue(question[1]);
    int b = vocab.symbolValue(question[2]);
    int countA = countOf(a);
    int countB = countOf(b);
    if (countA > countB) return Vocabulary::symbolName(a);
    if (countB > countA) return Vocabulary::symbolName(b);
    // Tie: the symbol with the lexicographically smaller id wins.
    return Vocabulary::symbolName(std::to_string(a) < std::to_string(b) ? a : b);
  }
  throw UsageError("malformed question token sequence");
}

inline SyntheticSample generateSample(std::uint64_t seed, const TaskConfig& config) {
  config.validate();
  Vocabulary vocab = config.vocabulary();
  rng::Stream stream(rng::mix({seed, 0x5eedu}));

  SyntheticSample sample;
  sample.seed = seed;
  sample.gridHeight = config.gridHeight;
  sample.gridWidth = config.gridWidth;
  sample.grid.reserve(config.cellCount());
  for (int i = 0; i < config.cellCount(); ++i) {
    // Uniform over empty plus every symbol.
    sample.grid.push_back(stream.nextInt(config.alphabetSize + 1));
  }

  QuestionFamilies family = config.questionFamilies;
  if (family == QuestionFamilies::both) {
    family = (stream.nextUnit() < 0.5) ? QuestionFamilies::count : QuestionFamilies::compare;
  }
  if (family == QuestionFamilies::count) {
    int symbol = 1 + stream.nextInt(config.alphabetSize);
    sample.question = {Vocabulary::questionCount, vocab.symbolToken(symbol)};
  } else {
    int a = 1 + stream.nextInt(config.alphabetSize);
    int b = 1 + stream.nextInt(config.alphabetSize - 1);
    if (b >= a) ++b;  // distinct pair, order random
    sample.question = {Vocabulary::questionCompare, vocab.symbolToken(a), vocab.symbolToken(b)};
  }
  sample.answer = answerFor(sample.grid, sample.question, vocab);
  return sample;
}

// Canonical rendering of an answer span: digits concatenate, symbol tokens
// render as "S<k>". Any other token makes the span malformed.
inline std::optional<std::string> canonicalSpanString(std::span<const int> span,
                                                      const Vocabulary& vocab) {
  if (span.empty()) {
    return std::nullopt;
  }
  std::string text;
  for (int id : span) {
    if (vocab.isDigit(id)) {
      text += static_cast<char>('0' + vocab.digitValue(id));
    } else if (vocab.isSymbol(id)) {
      text += Vocabulary::symbolName(vocab.symbolValue(id));
    } else {
      return std::nullopt;
    }
  }
  return text;
}

// Binary reward. Total on arbitrary token sequences: malformed responses
// score 0, they never raise.
inline int verify(std::span<const int> responseTokens, const std::string& groundTruth,
                  const Vocabulary& vocab) {
  int spanCount = 0;
  std::optional<std::string> canonical;
  std::size_t i = 0;
  while (i < responseTokens.size()) {
    if (responseTokens[i] != Vocabulary::answerStart) {
      ++i;
      continue;
    }
    std::size_t end = i + 1;
    while (end < responseTokens.size() && responseTokens[end] != Vocabulary::answerEnd) {
      ++end;
    }
    if (end == responseTokens.size()) {
      break;  // unterminated span is no span at all
    }
    ++spanCount;
    canonical = canonicalSpanString(responseTokens.subspan(i + 1, end - i - 1), vocab);
    i = end + 1;
  }
  if (spanCount != 1 || !canonical.has_value()) {
    return 0;
  }
  return (*canonical == groundTruth) ? 1 : 0;
}

inline std::vector<int> tokenizeAnswer(const std::string& answer, const Vocabulary& vocab) {
  std::vector<int> tokens;
  if (!answer.empty() && answer[0] == 'S') {
    tokens.push_back(vocab.symbolToken(std::stoi(answer.substr(1))));
    return tokens;
  }
  for (char c : answer) {
    tokens.push_back(vocab.digitToken(c - '0'));
  }
  return tokens;
}

// The response a perfect policy would emit; used to sanity-check verify().
inline std::vector<int> renderGoldResponse(const SyntheticSample& sample,
                                           const Vocabulary& vocab) {
  std::vector<int> tokens = {Vocabulary::answerStart};
  for (int id : tokenizeAnswer(sample.answer, vocab)) {
    tokens.push_back(id);
  }
  tokens.push_back(Vocabulary::answerEnd);
  tokens.push_back(Vocabulary::eos);
  return tokens;
}

// ---- JSONL serialization ----

inline nlohmann::json toJson(const SyntheticSample& sample) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < sample.gridHeight; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < sample.gridWidth; ++c) {
      row.push_back(sample.grid[static_cast<std::size_t>(r) * sample.gridWidth + c]);
    }
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"seed", sample.seed},
                        {"grid", std::move(rows)},
                        {"question", sample.question},
                        {"answer", sample.answer}};
}

inline SyntheticSample sampleFromJson(const nlohmann::json& j) {
  SyntheticSample sample;
  sample.seed = j.at("seed").get<std::uint64_t>();
  const auto& rows = j.at("grid");
  sample.gridHeight = static_cast<int>(rows.size());
  sample.gridWidth = rows.empty() ? 0 : static_cast<int>(rows[0].size());
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != sample.gridWidth) {
      throw ConfigError("ragged grid rows in sample JSON");
    }
    for (const auto& cell : row) {
      sample.grid.push_back(cell.get<int>());
    }
  }
  sample.question = j.at("question").get<std::vector<int>>();
  sample.answer = j.at("answer").get<std::string>();
  return sample;
}

inline void writeSamplesJsonl(const std::vector<SyntheticSample>& samples, std::ostream& out) {
  for (const SyntheticSample& sample : samples) {
    out << toJson(sample).dump() << '\n';
  }
}

inline std::vector<SyntheticSample> readSamplesJsonl(std::istream& in) {
  std::vector<SyntheticSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    samples.push_back(sampleFromJson(nlohmann::json::parse(line)));
  }
  return samples;
}

}  // namespace tor::task
