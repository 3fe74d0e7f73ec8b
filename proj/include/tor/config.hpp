#pragma once

// Structured-text run configuration: a small TOML subset ([section] headers,
// key = value lines, # comments, quoted strings) grouped by module, plus
// dotted-key overrides. Every assignment names a known field or parsing
// fails with the offending key. The materialized config renders back to the
// same format, so a run's manifest config reproduces the run exactly.

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tor/errors.hpp"
#include "tor/trainer.hpp"

namespace tor::config {

struct Assignment {
  std::string key;  // dotted: section.field, or a bare top-level name
  std::string value;
};

namespace detail {

inline std::string trim(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) {
    return "";
  }
  std::size_t end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

// Strips an inline comment, respecting quoted strings.
inline std::string stripComment(const std::string& line) {
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    if (line[k] == '"') {
      quoted = !quoted;
    } else if (line[k] == '#' && !quoted) {
      return line.substr(0, k);
    }
  }
  return line;
}

inline std::string unquote(const std::string& value, int lineNumber) {
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
    std::string inner = value.substr(1, value.size() - 2);
    if (inner.find('"') != std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineNumber) +
                        ": embedded quotes are not supported");
    }
    return inner;
  }
  if (value.find('"') != std::string::npos) {
    throw ConfigError("config line " + std::to_string(lineNumber) +
                      ": unterminated string value");
  }
  return value;
}

}  // namespace detail

inline std::vector<Assignment> parseConfigText(const std::string& text) {
  std::vector<Assignment> assignments;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineNumber = 0;
  while (std::getline(in, line)) {
    lineNumber += 1;
    std::string body = detail::trim(detail::stripComment(line));
    if (body.empty()) {
      continue;
    }
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3) {
        throw ConfigError("config line " + std::to_string(lineNumber) +
                          ": malformed section header " + body);
      }
      section = detail::trim(body.substr(1, body.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(lineNumber) +
                          ": empty section name");
      }
      continue;
    }
    std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineNumber) +
                        ": expected key = value, got " + body);
    }
    std::string key = detail::trim(body.substr(0, eq));
    std::string value = detail::unquote(detail::trim(body.substr(eq + 1)), lineNumber);
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineNumber) + ": empty key");
    }
    assignments.push_back({section.empty() ? key : section + "." + key, value});
  }
  return assignments;
}

inline std::vector<Assignment> parseConfigFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read config file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parseConfigText(text.str());
}

// One dotted-key=value override, the --set argument form.
inline Assignment parseOverride(const std::string& text) {
  std::size_t eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value, got '" + text + "'");
  }
  return {detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1))};
}

namespace detail {

inline int toInt(const Assignment& a) {
  try {
    std::size_t used = 0;
    int value = std::stoi(a.value, &used);
    if (used != a.value.size()) {
      throw std::invalid_argument("");
    }
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + a.key + "' needs an integer, got '" + a.value + "'");
  }
}

inline double toDouble(const Assignment& a) {
  try {
    std::size_t used = 0;
    double value = std::stod(a.value, &used);
    if (used != a.value.size()) {
      throw std::invalid_argument("");
    }
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + a.key + "' needs a number, got '" + a.value + "'");
  }
}

inline bool toBool(const Assignment& a) {
  if (a.value == "true") {
    return true;
  }
  if (a.value == "false") {
    return false;
  }
  throw ConfigError("config key '" + a.key + "' needs true or false, got '" + a.value + "'");
}

inline std::uint64_t toU64(const Assignment& a) {
  try {
    std::size_t used = 0;
    std::uint64_t value = std::stoull(a.value, &used);
    if (used != a.value.size()) {
      throw std::invalid_argument("");
    }
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + a.key + "' needs a nonnegative integer, got '" +
                      a.value + "'");
  }
}

inline bool applyTaskKey(train::TrainConfig& config, const Assignment& a) {
  if (a.key == "task.gridHeight") {
    config.task.gridHeight = toInt(a);
  } else if (a.key == "task.gridWidth") {
    config.task.gridWidth = toInt(a);
  } else if (a.key == "task.alphabetSize") {
    config.task.alphabetSize = toInt(a);
  } else if (a.key == "task.questionFamilies") {
    config.task.questionFamilies = task::questionFamiliesFromName(a.value);
  } else if (a.key == "task.maxAnswer") {
    config.task.maxAnswer = toInt(a);
  } else {
    return false;
  }
  return true;
}

inline void applyKey(train::TrainConfig& config, const Assignment& a) {
  if (a.key == "policy.embedDim") {
    config.policy.embedDim = toInt(a);
  } else if (a.key == "policy.numBlocks") {
    config.policy.numBlocks = toInt(a);
  } else if (a.key == "policy.ffnMult") {
    config.policy.ffnMult = toInt(a);
  } else if (a.key == "policy.maxTextLen") {
    config.policy.maxTextLen = toInt(a);
  } else if (a.key == "policy.initStd") {
    config.policy.initStd = toDouble(a);
  } else if (a.key == "selection.alphaR") {
    config.selection.alphaR = toDouble(a);
  } else if (a.key == "selection.alphaP") {
    config.selection.alphaP = toDouble(a);
  } else if (a.key == "selection.gammaR") {
    config.selection.gammaR = toDouble(a);
  } else if (a.key == "selection.gammaP") {
    config.selection.gammaP = toDouble(a);
  } else if (a.key == "selection.overlapAdditive") {
    config.selection.overlapAdditive = toBool(a);
  } else if (a.key == "objective.epsilon") {
    config.objective.epsilon = toDouble(a);
  } else if (a.key == "objective.epsilonLow") {
    config.objective.epsilonLow = toDouble(a);
  } else if (a.key == "objective.epsilonHigh") {
    config.objective.epsilonHigh = toDouble(a);
  } else if (a.key == "objective.beta") {
    config.objective.beta = toDouble(a);
  } else if (a.key == "objective.advantageEpsilon") {
    config.objective.advantageEpsilon = toDouble(a);
  } else if (a.key == "objective.sampleStd") {
    config.objective.sampleStd = toBool(a);
  } else if (a.key == "trainer.rolloutBatchSize") {
    config.rolloutBatchSize = toInt(a);
  } else if (a.key == "trainer.groupSize") {
    config.groupSize = toInt(a);
  } else if (a.key == "trainer.globalBatchSize") {
    config.globalBatchSize = toInt(a);
  } else if (a.key == "trainer.learningRate") {
    config.learningRate = toDouble(a);
  } else if (a.key == "trainer.totalRolloutBatches") {
    config.totalRolloutBatches = toInt(a);
  } else if (a.key == "trainer.topP") {
    config.topP = toDouble(a);
  } else if (a.key == "trainer.maxLen") {
    config.maxLen = toInt(a);
  } else if (a.key == "trainer.optimizer") {
    config.optimizer = train::optimizerFromName(a.value);
  } else if (a.key == "trainer.momentum") {
    config.momentum = toDouble(a);
  } else if (a.key == "trainer.epochsPerBatch") {
    config.epochsPerBatch = toInt(a);
  } else if (a.key == "trainer.warmStartSteps") {
    config.warmStartSteps = toInt(a);
  } else if (a.key == "trainer.betaDecayFrom") {
    config.betaDecayFrom = toInt(a);
  } else if (a.key == "trainer.betaFinal") {
    config.betaFinal = toDouble(a);
  } else if (a.key == "trainer.rngSeed") {
    config.rngSeed = toU64(a);
  } else {
    throw ConfigError("unknown config key '" + a.key + "'");
  }
}

}  // namespace detail

// Materializes a TrainConfig from file assignments plus overrides (overrides
// win, applied last). The algorithm choice is resolved first because it picks
// the objective defaults; task keys come next because the policy shape
// derives from the task.
inline train::TrainConfig buildTrainConfig(const std::vector<Assignment>& fromFile,
                                           const std::vector<Assignment>& overrides = {}) {
  std::vector<Assignment> merged = fromFile;
  merged.insert(merged.end(), overrides.begin(), overrides.end());

  objectives::Algorithm algorithm = objectives::Algorithm::grpo;
  for (const Assignment& a : merged) {
    if (a.key == "algorithm") {
      algorithm = objectives::algorithmFromName(a.value);
    }
  }
  train::TrainConfig config = train::TrainConfig::defaults(algorithm, task::TaskConfig{});
  for (const Assignment& a : merged) {
    if (a.key != "algorithm") {
      detail::applyTaskKey(config, a);
    }
  }
  config.policy = policy::PolicyConfig::forTask(config.task);
  for (const Assignment& a : merged) {
    if (a.key == "algorithm" || detail::applyTaskKey(config, a)) {
      continue;
    }
    detail::applyKey(config, a);
  }
  return config;
}

namespace detail {

inline std::string formatNumber(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

}  // namespace detail

// Renders every field, grouped by module. Parsing the result back through
// buildTrainConfig reproduces the same config (and therefore the same text).
inline std::string toConfigText(const train::TrainConfig& config) {
  std::ostringstream out;
  out << "algorithm = \"" << objectives::algorithmName(config.algorithm) << "\"\n";
  out << "\n[task]\n";
  out << "gridHeight = " << config.task.gridHeight << '\n';
  out << "gridWidth = " << config.task.gridWidth << '\n';
  out << "alphabetSize = " << config.task.alphabetSize << '\n';
  out << "questionFamilies = \"" << task::questionFamiliesName(config.task.questionFamilies)
      << "\"\n";
  out << "maxAnswer = " << config.task.maxAnswer << '\n';
  out << "\n[policy]\n";
  out << "embedDim = " << config.policy.embedDim << '\n';
  out << "numBlocks = " << config.policy.numBlocks << '\n';
  out << "ffnMult = " << config.policy.ffnMult << '\n';
  out << "maxTextLen = " << config.policy.maxTextLen << '\n';
  out << "initStd = " << detail::formatNumber(config.policy.initStd) << '\n';
  out << "\n[selection]\n";
  out << "alphaR = " << detail::formatNumber(config.selection.alphaR) << '\n';
  out << "alphaP = " << detail::formatNumber(config.selection.alphaP) << '\n';
  out << "gammaR = " << detail::formatNumber(config.selection.gammaR) << '\n';
  out << "gammaP = " << detail::formatNumber(config.selection.gammaP) << '\n';
  out << "overlapAdditive = " << (config.selection.overlapAdditive ? "true" : "false") << '\n';
  out << "\n[objective]\n";
  out << "epsilon = " << detail::formatNumber(config.objective.epsilon) << '\n';
  out << "epsilonLow = " << detail::formatNumber(config.objective.epsilonLow) << '\n';
  out << "epsilonHigh = " << detail::formatNumber(config.objective.epsilonHigh) << '\n';
  out << "beta = " << detail::formatNumber(config.objective.beta) << '\n';
  out << "advantageEpsilon = " << detail::formatNumber(config.objective.advantageEpsilon)
      << '\n';
  out << "sampleStd = " << (config.objective.sampleStd ? "true" : "false") << '\n';
  out << "\n[trainer]\n";
  out << "rolloutBatchSize = " << config.rolloutBatchSize << '\n';
  out << "groupSize = " << config.groupSize << '\n';
  out << "globalBatchSize = " << config.globalBatchSize << '\n';
  out << "learningRate = " << detail::formatNumber(config.learningRate) << '\n';
  out << "totalRolloutBatches = " << config.totalRolloutBatches << '\n';
  out << "topP = " << detail::formatNumber(config.topP) << '\n';
  out << "maxLen = " << config.maxLen << '\n';
  out << "optimizer = \"" << train::optimizerName(config.optimizer) << "\"\n";
  out << "momentum = " << detail::formatNumber(config.momentum) << '\n';
  out << "epochsPerBatch = " << config.epochsPerBatch << '\n';
  out << "warmStartSteps = " << config.warmStartSteps << '\n';
  out << "betaDecayFrom = " << config.betaDecayFrom << '\n';
  out << "betaFinal = " << detail::formatNumber(config.betaFinal) << '\n';
  out << "rngSeed = " << config.rngSeed << '\n';
  return out.str();
}

}  // namespace tor::config
