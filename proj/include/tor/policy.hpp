#pragma once

// A tiny image-conditioned causal decoder. The sequence is the question,
// then the flattened grid (one row per cell, embedded by symbol plus 2-D
// position), then the response tokens. The question comes first so every
// cell row can read which symbol is being asked about and mark its own
// match; the response rows then only need to pool those marks. Sampling,
// teacher-forced scoring, and training all build the same graph, so
// log-probs agree across all three bitwise; every op in the trunk is
// row-local or attends strictly backwards, which keeps recorded
// sampling-time values reproducible after the fact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tor/autodiff.hpp"
#include "tor/errors.hpp"
#include "tor/rng.hpp"
#include "tor/scoring.hpp"
#include "tor/synthtask.hpp"

namespace tor::policy {

struct PolicyConfig {
  int vocabSize = 0;
  int gridHeight = 0;
  int gridWidth = 0;
  int alphabetSize = 0;
  int embedDim = 16;
  int numBlocks = 2;
  int ffnMult = 4;
  int maxTextLen = 40;
  double initStd = 0.08;

  int imageRows() const { return gridHeight * gridWidth; }

  static PolicyConfig forTask(const task::TaskConfig& taskConfig) {
    taskConfig.validate();
    PolicyConfig config;
    config.vocabSize = taskConfig.vocabulary().size();
    config.gridHeight = taskConfig.gridHeight;
    config.gridWidth = taskConfig.gridWidth;
    config.alphabetSize = taskConfig.alphabetSize;
    return config;
  }

  void validate() const {
    if (vocabSize < task::Vocabulary::symbolBase + 2) {
      throw ConfigError("vocabulary is too small to hold the reserved tokens");
    }
    if (gridHeight < 1 || gridWidth < 1 || alphabetSize < 2) {
      throw ConfigError("policy grid geometry is invalid");
    }
    if (embedDim < 2 || embedDim > 32) {
      throw ConfigError("embedDim must lie in [2, 32]");
    }
    if (numBlocks < 1 || numBlocks > 2) {
      throw ConfigError("numBlocks must be 1 or 2");
    }
    if (ffnMult < 1 || ffnMult > 8) {
      throw ConfigError("ffnMult must lie in [1, 8]");
    }
    if (maxTextLen < 4) {
      throw ConfigError("maxTextLen is too small");
    }
  }
};

struct BlockParams {
  diff::Tensor wq, wk, wv, wo;
  diff::Tensor ffnW1, ffnB1;          // value path
  diff::Tensor ffnGateW, ffnGateB;    // tanh gate path
  diff::Tensor ffnW2, ffnB2;
};

struct PolicyParams {
  PolicyConfig config;
  std::uint64_t versionTag = 0;
  diff::Tensor tokenEmbedding;    // vocab x d
  diff::Tensor cellEmbedding;     // (alphabet+1) x d, row 0 is the empty cell
  diff::Tensor rowPosition;       // gridHeight x d
  diff::Tensor colPosition;       // gridWidth x d
  diff::Tensor textPosition;      // maxTextLen x d
  std::vector<BlockParams> blocks;
  diff::Tensor outputProjection;  // d x vocab

  template <class Fn>
  void forEachParameter(Fn&& fn) {
    fn("tokenEmbedding", tokenEmbedding);
    fn("cellEmbedding", cellEmbedding);
    fn("rowPosition", rowPosition);
    fn("colPosition", colPosition);
    fn("textPosition", textPosition);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      std::string prefix = "block" + std::to_string(k) + ".";
      fn(prefix + "wq", blocks[k].wq);
      fn(prefix + "wk", blocks[k].wk);
      fn(prefix + "wv", blocks[k].wv);
      fn(prefix + "wo", blocks[k].wo);
      fn(prefix + "ffnW1", blocks[k].ffnW1);
      fn(prefix + "ffnB1", blocks[k].ffnB1);
      fn(prefix + "ffnGateW", blocks[k].ffnGateW);
      fn(prefix + "ffnGateB", blocks[k].ffnGateB);
      fn(prefix + "ffnW2", blocks[k].ffnW2);
      fn(prefix + "ffnB2", blocks[k].ffnB2);
    }
    fn("outputProjection", outputProjection);
  }

  template <class Fn>
  void forEachParameter(Fn&& fn) const {
    const_cast<PolicyParams*>(this)->forEachParameter(
        [&fn](const std::string& name, diff::Tensor& tensor) {
          fn(name, static_cast<const diff::Tensor&>(tensor));
        });
  }

  std::size_t parameterCount() const {
    std::size_t total = 0;
    forEachParameter([&total](const std::string&, const diff::Tensor& t) { total += t.size(); });
    return total;
  }

  static PolicyParams initialize(const PolicyConfig& config, std::uint64_t seed) {
    config.validate();
    int d = config.embedDim;
    PolicyParams params;
    params.config = config;
    params.tokenEmbedding = diff::Tensor(config.vocabSize, d);
    params.cellEmbedding = diff::Tensor(config.alphabetSize + 1, d);
    params.rowPosition = diff::Tensor(config.gridHeight, d);
    params.colPosition = diff::Tensor(config.gridWidth, d);
    params.textPosition = diff::Tensor(config.maxTextLen, d);
    params.blocks.resize(static_cast<std::size_t>(config.numBlocks));
    for (BlockParams& block : params.blocks) {
      block.wq = diff::Tensor(d, d);
      block.wk = diff::Tensor(d, d);
      block.wv = diff::Tensor(d, d);
      block.wo = diff::Tensor(d, d);
      block.ffnW1 = diff::Tensor(d, d * config.ffnMult);
      block.ffnB1 = diff::Tensor(1, d * config.ffnMult);
      block.ffnGateW = diff::Tensor(d, d * config.ffnMult);
      block.ffnGateB = diff::Tensor(1, d * config.ffnMult);
      block.ffnW2 = diff::Tensor(d * config.ffnMult, d);
      block.ffnB2 = diff::Tensor(1, d);
    }
    params.outputProjection = diff::Tensor(d, config.vocabSize);

    rng::Stream stream(rng::mix({seed, 0x1417u}));
    params.forEachParameter([&stream, &config](const std::string& name, diff::Tensor& tensor) {
      if (name.find("ffnB") != std::string::npos ||
          name.find("GateB") != std::string::npos) {
        return;  // biases start at zero
      }
      for (double& v : tensor.values()) {
        v = config.initStd * stream.nextGaussian();
      }
    });
    if (params.parameterCount() > 100000) {
      throw ConfigError("policy exceeds the 100k parameter budget (" +
                        std::to_string(params.parameterCount()) + ")");
    }
    return params;
  }
};

enum class ImageCondition { actual, placeholder };

struct RolloutRecord {
  int sampleIndex = 0;   // b
  int rolloutIndex = 0;  // i
  std::vector<int> tokens;
  std::vector<double> logProbWithImage;
  std::vector<double> topPEntropy;
  std::vector<double> logProbPlaceholder;  // empty until a score table fills it
  std::uint64_t behaviorVersionTag = 0;

  int length() const { return static_cast<int>(tokens.size()); }

  bool operator==(const RolloutRecord&) const = default;
};

struct RolloutBatch {
  std::vector<task::SyntheticSample> samples;
  std::vector<std::vector<RolloutRecord>> rollouts;  // [B][G]

  int sampleCount() const { return static_cast<int>(samples.size()); }
  int groupSize() const { return rollouts.empty() ? 0 : static_cast<int>(rollouts[0].size()); }

  std::vector<std::vector<int>> lengths() const {
    std::vector<std::vector<int>> result(rollouts.size());
    for (std::size_t b = 0; b < rollouts.size(); ++b) {
      for (const RolloutRecord& record : rollouts[b]) {
        result[b].push_back(record.length());
      }
    }
    return result;
  }

  long totalTokens() const {
    long total = 0;
    for (const auto& group : rollouts) {
      for (const RolloutRecord& record : group) {
        total += record.length();
      }
    }
    return total;
  }
};

namespace detail {

// Graph-side handles for every parameter tensor, bound either as trainable
// inputs (gradients required) or as views of frozen parameters.
struct ParamNodes {
  diff::NodeId tokenEmbedding, cellEmbedding, rowPosition, colPosition, textPosition;
  struct Block {
    diff::NodeId wq, wk, wv, wo, ffnW1, ffnB1, ffnGateW, ffnGateB, ffnW2, ffnB2;
  };
  std::vector<Block> blocks;
  diff::NodeId outputProjection;
};

inline ParamNodes bindParameters(diff::Graph& graph, const PolicyParams& params, bool trainable) {
  ParamNodes nodes{};
  std::vector<diff::NodeId> flat;
  params.forEachParameter([&graph, &flat, trainable](const std::string& name,
                                                     const diff::Tensor& tensor) {
    flat.push_back(trainable ? graph.input(name, tensor.rows(), tensor.cols())
                             : graph.constantView(tensor));
  });
  std::size_t cursor = 0;
  auto next = [&flat, &cursor]() { return flat[cursor++]; };
  nodes.tokenEmbedding = next();
  nodes.cellEmbedding = next();
  nodes.rowPosition = next();
  nodes.colPosition = next();
  nodes.textPosition = next();
  nodes.blocks.resize(params.blocks.size());
  for (auto& block : nodes.blocks) {
    block.wq = next();
    block.wk = next();
    block.wv = next();
    block.wo = next();
    block.ffnW1 = next();
    block.ffnB1 = next();
    block.ffnGateW = next();
    block.ffnGateB = next();
    block.ffnW2 = next();
    block.ffnB2 = next();
  }
  nodes.outputProjection = next();
  return nodes;
}

struct TrunkForward {
  diff::NodeId hidden = -1;  // [questionLen + imageRows + responseLen, d] after the final norm
  std::vector<diff::NodeId> attention;
  int imageRows = 0;
  int textLen = 0;
  int questionLen = 0;
};

// Row layout: text[0..questionLen) first, then the grid cells, then the
// remaining text (the response so far).
inline TrunkForward buildTrunk(diff::Graph& graph, const ParamNodes& nodes,
                               const PolicyConfig& config, std::span<const int> grid,
                               std::span<const int> text, int questionLen) {
  if (static_cast<int>(grid.size()) != config.imageRows()) {
    throw UsageError("grid size does not match the configured geometry");
  }
  if (static_cast<int>(text.size()) > config.maxTextLen) {
    throw UsageError("text length " + std::to_string(text.size()) +
                     " exceeds maxTextLen " + std::to_string(config.maxTextLen));
  }
  if (questionLen < 1 || questionLen > static_cast<int>(text.size())) {
    throw UsageError("questionLen must address a nonempty prefix of the text");
  }

  std::vector<int> cellIds, rowIds, colIds;
  cellIds.reserve(grid.size());
  for (int r = 0; r < config.gridHeight; ++r) {
    for (int c = 0; c < config.gridWidth; ++c) {
      int cell = grid[static_cast<std::size_t>(r) * config.gridWidth + c];
      if (cell < 0 || cell > config.alphabetSize) {
        throw UsageError("grid cell value out of range");
      }
      cellIds.push_back(cell);
      rowIds.push_back(r);
      colIds.push_back(c);
    }
  }
  std::vector<int> textIds(text.begin(), text.end());
  for (int id : textIds) {
    if (id < 0 || id >= config.vocabSize) {
      throw UsageError("text token id out of range");
    }
  }
  std::vector<int> positions(textIds.size());
  std::iota(positions.begin(), positions.end(), 0);

  diff::NodeId image = graph.add(
      graph.add(graph.gatherRows(nodes.cellEmbedding, cellIds),
                graph.gatherRows(nodes.rowPosition, rowIds)),
      graph.gatherRows(nodes.colPosition, colIds));
  std::vector<int> questionIds(textIds.begin(), textIds.begin() + questionLen);
  std::vector<int> questionPositions(positions.begin(), positions.begin() + questionLen);
  diff::NodeId question = graph.add(graph.gatherRows(nodes.tokenEmbedding, questionIds),
                                    graph.gatherRows(nodes.textPosition, questionPositions));
  std::vector<diff::NodeId> parts = {question, image};
  if (questionLen < static_cast<int>(textIds.size())) {
    std::vector<int> responseIds(textIds.begin() + questionLen, textIds.end());
    std::vector<int> responsePositions(positions.begin() + questionLen, positions.end());
    parts.push_back(graph.add(graph.gatherRows(nodes.tokenEmbedding, responseIds),
                              graph.gatherRows(nodes.textPosition, responsePositions)));
  }
  diff::NodeId x = graph.concatRows(parts);

  TrunkForward out;
  out.imageRows = config.imageRows();
  out.textLen = static_cast<int>(textIds.size());
  out.questionLen = questionLen;
  double attentionScale = 1.0 / std::sqrt(static_cast<double>(config.embedDim));
  for (const ParamNodes::Block& block : nodes.blocks) {
    diff::NodeId h = graph.rmsNorm(x, 1e-5);
    diff::NodeId queries = graph.matmul(h, block.wq);
    diff::NodeId keys = graph.matmul(h, block.wk);
    diff::NodeId values = graph.matmul(h, block.wv);
    diff::NodeId scores =
        graph.scale(graph.matmul(queries, graph.transpose(keys)), attentionScale);
    diff::NodeId attention = graph.causalSoftmaxRows(scores);
    out.attention.push_back(attention);
    diff::NodeId context = graph.matmul(attention, values);
    x = graph.add(x, graph.matmul(context, block.wo));

    // Gated feed-forward: the elementwise product gives the block a
    // first-order way to form features like "this cell equals the queried
    // symbol", which a plain odd activation only reaches at third order.
    diff::NodeId f = graph.rmsNorm(x, 1e-5);
    diff::NodeId value = graph.addRow(graph.matmul(f, block.ffnW1), block.ffnB1);
    diff::NodeId gate = graph.tanh(graph.addRow(graph.matmul(f, block.ffnGateW), block.ffnGateB));
    x = graph.add(x, graph.addRow(graph.matmul(graph.mul(gate, value), block.ffnW2),
                                  block.ffnB2));
  }
  out.hidden = graph.rmsNorm(x, 1e-5);
  return out;
}

// Log-softmax over the vocabulary at the rows that predict the given
// response positions (the row holding response token t-1, or the final
// image row for t = 0).
inline diff::NodeId predictionLogProbs(diff::Graph& graph, const ParamNodes& nodes,
                                       const TrunkForward& trunk, int questionLen,
                                       int firstResponsePosition, int count) {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    rows.push_back(questionLen + trunk.imageRows + firstResponsePosition + j - 1);
  }
  diff::NodeId picked = graph.gatherRows(trunk.hidden, std::move(rows));
  return graph.logSoftmaxRows(graph.matmul(picked, nodes.outputProjection));
}

}  // namespace detail

// Smallest probability-sorted prefix whose cumulative mass reaches topP;
// ties in probability resolve by token id. Returns the chosen token for a
// uniform draw `unit` in [0, 1) over the renormalized nucleus.
inline int sampleTopP(std::span<const double> probs, double topP, double unit) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&probs](int a, int b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t nucleusSize = 0;
  for (int id : order) {
    mass += probs[id];
    ++nucleusSize;
    if (mass >= topP) {
      break;
    }
  }
  double target = unit * mass;
  double running = 0.0;
  for (std::size_t k = 0; k < nucleusSize; ++k) {
    running += probs[order[k]];
    if (running > target) {
      return order[k];
    }
  }
  return order[nucleusSize - 1];
}

// One decoding step: full-vocabulary log-probs for the next token given the
// question and the generated prefix.
inline std::vector<double> nextLogProbs(const PolicyParams& params, std::span<const int> grid,
                                        std::span<const int> question,
                                        std::span<const int> prefix) {
  std::vector<int> text(question.begin(), question.end());
  text.insert(text.end(), prefix.begin(), prefix.end());
  diff::Graph graph(64);
  detail::ParamNodes nodes = detail::bindParameters(graph, params, false);
  detail::TrunkForward trunk = detail::buildTrunk(graph, nodes, params.config, grid, text,
                                                  static_cast<int>(question.size()));
  diff::NodeId logProbs =
      detail::predictionLogProbs(graph, nodes, trunk, static_cast<int>(question.size()),
                                 static_cast<int>(prefix.size()), 1);
  graph.setOutput(graph.sum(logProbs));
  graph.evaluate({});
  auto row = graph.valueOf(logProbs);
  return {row.begin(), row.end()};
}

inline std::vector<double> nextDistribution(const PolicyParams& params, std::span<const int> grid,
                                            std::span<const int> question,
                                            std::span<const int> prefix, int maxLen) {
  if (static_cast<int>(prefix.size()) >= maxLen) {
    throw UsageError("prefix has already reached maxLen");
  }
  std::vector<double> probs = nextLogProbs(params, grid, question, prefix);
  for (double& v : probs) {
    v = std::exp(v);
  }
  return probs;
}

inline RolloutBatch sampleRollouts(const PolicyParams& params,
                                   std::vector<task::SyntheticSample> samples, int groupSize,
                                   double topP, int maxLen, std::uint64_t rngSeed) {
  if (groupSize < 2) {
    throw UsageError("rollout group size must be at least 2");
  }
  if (!(topP > 0.0) || topP > 1.0) {
    throw UsageError("topP must lie in (0, 1]");
  }
  if (samples.empty()) {
    throw UsageError("sampleRollouts needs at least one sample");
  }
  for (const task::SyntheticSample& sample : samples) {
    if (static_cast<int>(sample.question.size()) + maxLen > params.config.maxTextLen) {
      throw UsageError("question plus maxLen exceeds the policy's maxTextLen");
    }
  }

  RolloutBatch batch;
  batch.samples = std::move(samples);
  batch.rollouts.resize(batch.samples.size());
  for (int b = 0; b < batch.sampleCount(); ++b) {
    const task::SyntheticSample& sample = batch.samples[static_cast<std::size_t>(b)];
    for (int i = 0; i < groupSize; ++i) {
      rng::Stream stream(rng::mix({rngSeed, static_cast<std::uint64_t>(b),
                                   static_cast<std::uint64_t>(i)}));
      RolloutRecord record;
      record.sampleIndex = b;
      record.rolloutIndex = i;
      record.behaviorVersionTag = params.versionTag;
      while (record.length() < maxLen) {
        std::vector<double> logProbs =
            nextLogProbs(params, sample.grid, sample.question, record.tokens);
        std::vector<double> probs(logProbs.size());
        for (std::size_t v = 0; v < logProbs.size(); ++v) {
          probs[v] = std::exp(logProbs[v]);
        }
        record.topPEntropy.push_back(scoring::tokenEntropy(probs, topP));
        int token = sampleTopP(probs, topP, stream.nextUnit());
        record.tokens.push_back(token);
        record.logProbWithImage.push_back(logProbs[static_cast<std::size_t>(token)]);
        if (token == task::Vocabulary::eos) {
          break;
        }
      }
      batch.rollouts[static_cast<std::size_t>(b)].push_back(std::move(record));
    }
  }
  return batch;
}

// Teacher-forced per-token log-probs of a recorded rollout under either
// image condition.
inline std::vector<double> scoreUnderCondition(const PolicyParams& params,
                                               const task::SyntheticSample& sample,
                                               const RolloutRecord& record,
                                               ImageCondition condition) {
  if (record.tokens.empty()) {
    throw UsageError("cannot score an empty rollout");
  }
  std::vector<int> grid = sample.grid;
  if (condition == ImageCondition::placeholder) {
    grid.assign(grid.size(), task::Vocabulary::pad);
  }
  std::vector<int> text(sample.question.begin(), sample.question.end());
  text.insert(text.end(), record.tokens.begin(), record.tokens.end());

  diff::Graph graph(64);
  detail::ParamNodes nodes = detail::bindParameters(graph, params, false);
  detail::TrunkForward trunk = detail::buildTrunk(graph, nodes, params.config, grid, text,
                                                  static_cast<int>(sample.question.size()));
  diff::NodeId logProbs = detail::predictionLogProbs(
      graph, nodes, trunk, static_cast<int>(sample.question.size()), 0, record.length());
  std::vector<std::pair<int, int>> cells;
  cells.reserve(record.tokens.size());
  for (int t = 0; t < record.length(); ++t) {
    cells.emplace_back(t, record.tokens[static_cast<std::size_t>(t)]);
  }
  diff::NodeId picked = graph.pick(logProbs, cells);
  graph.setOutput(graph.sum(picked));
  graph.evaluate({});
  auto values = graph.valueOf(picked);
  return {values.begin(), values.end()};
}

struct DetailedScore {
  std::vector<double> logProb;           // of the recorded tokens
  std::vector<double> fullEntropy;       // Shannon entropy of each step's distribution
  std::vector<double> attentionToImage;  // mean image-column attention, blocks averaged
};

// Same teacher-forced pass as scoreUnderCondition, additionally reading the
// full next-token distributions and the attention rows.
inline DetailedScore scoreDetailed(const PolicyParams& params, const task::SyntheticSample& sample,
                                   const RolloutRecord& record, ImageCondition condition) {
  if (record.tokens.empty()) {
    throw UsageError("cannot score an empty rollout");
  }
  std::vector<int> grid = sample.grid;
  if (condition == ImageCondition::placeholder) {
    grid.assign(grid.size(), task::Vocabulary::pad);
  }
  std::vector<int> text(sample.question.begin(), sample.question.end());
  text.insert(text.end(), record.tokens.begin(), record.tokens.end());
  int questionLen = static_cast<int>(sample.question.size());

  diff::Graph graph(64);
  detail::ParamNodes nodes = detail::bindParameters(graph, params, false);
  detail::TrunkForward trunk = detail::buildTrunk(graph, nodes, params.config, grid, text,
                                                  questionLen);
  diff::NodeId logProbs =
      detail::predictionLogProbs(graph, nodes, trunk, questionLen, 0, record.length());
  graph.setOutput(graph.sum(logProbs));
  graph.evaluate({});

  DetailedScore score;
  auto rows = graph.valueOf(logProbs);
  int vocab = params.config.vocabSize;
  std::vector<double> probs(static_cast<std::size_t>(vocab));
  for (int t = 0; t < record.length(); ++t) {
    const double* row = rows.data() + static_cast<std::size_t>(t) * vocab;
    score.logProb.push_back(row[record.tokens[static_cast<std::size_t>(t)]]);
    for (int v = 0; v < vocab; ++v) {
      probs[static_cast<std::size_t>(v)] = std::exp(row[v]);
    }
    score.fullEntropy.push_back(scoring::shannonEntropy(probs));
  }
  int sequenceLen = trunk.imageRows + trunk.textLen;
  for (int t = 0; t < record.length(); ++t) {
    int attendingRow = questionLen + trunk.imageRows + t - 1;
    double total = 0.0;
    for (diff::NodeId attention : trunk.attention) {
      auto matrix = graph.valueOf(attention);
      const double* row = matrix.data() + static_cast<std::size_t>(attendingRow) * sequenceLen;
      double imageMass = 0.0;
      for (int c = questionLen; c < questionLen + trunk.imageRows; ++c) {
        imageMass += row[c];
      }
      total += imageMass / trunk.imageRows;
    }
    score.attentionToImage.push_back(total / static_cast<double>(trunk.attention.size()));
  }
  return score;
}

// Argmax decoding; ties resolve toward the smallest token id.
inline std::vector<int> generateGreedy(const PolicyParams& params, std::span<const int> grid,
                                       std::span<const int> question, int maxLen) {
  std::vector<int> tokens;
  while (static_cast<int>(tokens.size()) < maxLen) {
    std::vector<double> logProbs = nextLogProbs(params, grid, question, tokens);
    int best = static_cast<int>(std::max_element(logProbs.begin(), logProbs.end()) -
                                logProbs.begin());
    tokens.push_back(best);
    if (best == task::Vocabulary::eos) {
      break;
    }
  }
  return tokens;
}

// ---- warm start ----

namespace detail {

// A well-formed response whose answer content comes from the task's answer
// marginal: the delimiters and EOS are real, and the content is the true
// answer for an independently drawn grid, so it carries the base rates of the
// question family but nothing about the grid actually shown.
inline std::vector<int> randomContentResponse(const task::SyntheticSample& sample,
                                              const task::TaskConfig& taskConfig,
                                              rng::Stream& stream) {
  task::Vocabulary vocab = taskConfig.vocabulary();
  task::SyntheticSample unrelated = task::generateSample(stream.nextU64(), taskConfig);
  std::string content = task::answerFor(unrelated.grid, sample.question, vocab);
  std::vector<int> tokens = {task::Vocabulary::answerStart};
  for (int id : task::tokenizeAnswer(content, vocab)) {
    tokens.push_back(id);
  }
  tokens.push_back(task::Vocabulary::answerEnd);
  tokens.push_back(task::Vocabulary::eos);
  return tokens;
}

constexpr int warmStartExamplesPerStep = 16;
constexpr double warmStartLearningRate = 0.05;

}  // namespace detail

// Teacher-forced bootstrap toward well-formed responses with chance-level
// content. A freshly initialized policy almost never emits a complete
// delimited answer span, so the binary verifier scores every rollout zero,
// group advantages vanish, and reward-driven training never gets off the
// ground. Briefly fitting spans filled with uniformly random content hands
// the sampler the response grammar while leaving answer accuracy at chance;
// reinforcement learning takes over from there, the same division of labor
// as running RLVR on a pretrained model instead of on noise.
inline void warmStart(PolicyParams& params, const task::TaskConfig& taskConfig, int steps,
                      std::uint64_t seed) {
  if (steps < 0) {
    throw UsageError("warmStart step count must be nonnegative");
  }
  taskConfig.validate();
  rng::Stream stream(rng::mix({seed, 0xf0a7u}));
  for (int step = 0; step < steps; ++step) {
    diff::Graph graph(256);
    detail::ParamNodes nodes = detail::bindParameters(graph, params, true);
    diff::Inputs inputs;
    params.forEachParameter([&inputs](const std::string& name, const diff::Tensor& tensor) {
      inputs[name] = &tensor;
    });

    std::vector<diff::NodeId> perExample;
    long totalTokens = 0;
    for (int k = 0; k < detail::warmStartExamplesPerStep; ++k) {
      task::SyntheticSample sample = task::generateSample(stream.nextU64(), taskConfig);
      std::vector<int> target = detail::randomContentResponse(sample, taskConfig, stream);
      std::vector<int> text(sample.question.begin(), sample.question.end());
      text.insert(text.end(), target.begin(), target.end());
      detail::TrunkForward trunk =
          detail::buildTrunk(graph, nodes, params.config, sample.grid, text,
                             static_cast<int>(sample.question.size()));
      diff::NodeId logProbs = detail::predictionLogProbs(
          graph, nodes, trunk, static_cast<int>(sample.question.size()), 0,
          static_cast<int>(target.size()));
      std::vector<std::pair<int, int>> cells;
      cells.reserve(target.size());
      for (std::size_t t = 0; t < target.size(); ++t) {
        cells.emplace_back(static_cast<int>(t), target[t]);
      }
      perExample.push_back(graph.sum(graph.pick(logProbs, cells)));
      totalTokens += static_cast<long>(target.size());
    }

    diff::NodeId meanLogProb = graph.scale(graph.sum(graph.concatRows(perExample)),
                                           1.0 / static_cast<double>(totalTokens));
    graph.setOutput(meanLogProb);
    graph.evaluate(inputs);
    graph.backward();
    params.forEachParameter([&graph](const std::string& name, diff::Tensor& tensor) {
      diff::Tensor gradient = graph.inputGradient(name);
      for (std::size_t v = 0; v < tensor.values().size(); ++v) {
        tensor.values()[v] += detail::warmStartLearningRate * gradient.values()[v];
      }
    });
  }
}

// ---- checkpoints ----

namespace detail {

constexpr char checkpointMagic[8] = {'T', 'O', 'R', 'P', 'O', 'L', '0', '1'};

template <class T>
void writeRaw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T readRaw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) {
    throw CheckpointError("checkpoint file is truncated");
  }
  return value;
}

}  // namespace detail

inline void saveCheckpoint(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("cannot open checkpoint for writing: " + path.string());
  }
  out.write(detail::checkpointMagic, sizeof(detail::checkpointMagic));
  const PolicyConfig& c = params.config;
  for (int v : {c.vocabSize, c.gridHeight, c.gridWidth, c.alphabetSize, c.embedDim,
                c.numBlocks, c.ffnMult, c.maxTextLen}) {
    detail::writeRaw(out, static_cast<std::int32_t>(v));
  }
  detail::writeRaw(out, c.initStd);
  detail::writeRaw(out, params.versionTag);
  std::int32_t tensorCount = 0;
  params.forEachParameter([&tensorCount](const std::string&, const diff::Tensor&) {
    ++tensorCount;
  });
  detail::writeRaw(out, tensorCount);
  params.forEachParameter([&out](const std::string& name, const diff::Tensor& tensor) {
    detail::writeRaw(out, static_cast<std::int32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::writeRaw(out, static_cast<std::int32_t>(tensor.rows()));
    detail::writeRaw(out, static_cast<std::int32_t>(tensor.cols()));
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  });
  if (!out) {
    throw CheckpointError("checkpoint write failed: " + path.string());
  }
}

inline PolicyParams loadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open checkpoint: " + path.string());
  }
  char magic[sizeof(detail::checkpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic),
                         std::begin(detail::checkpointMagic))) {
    throw CheckpointError("not a recognized checkpoint (bad magic or version): " +
                          path.string());
  }
  PolicyConfig config;
  config.vocabSize = detail::readRaw<std::int32_t>(in);
  config.gridHeight = detail::readRaw<std::int32_t>(in);
  config.gridWidth = detail::readRaw<std::int32_t>(in);
  config.alphabetSize = detail::readRaw<std::int32_t>(in);
  config.embedDim = detail::readRaw<std::int32_t>(in);
  config.numBlocks = detail::readRaw<std::int32_t>(in);
  config.ffnMult = detail::readRaw<std::int32_t>(in);
  config.maxTextLen = detail::readRaw<std::int32_t>(in);
  config.initStd = detail::readRaw<double>(in);
  std::uint64_t versionTag = detail::readRaw<std::uint64_t>(in);

  PolicyParams params = PolicyParams::initialize(config, 0);
  params.versionTag = versionTag;
  std::int32_t tensorCount = detail::readRaw<std::int32_t>(in);
  std::int32_t expected = 0;
  params.forEachParameter([&expected](const std::string&, const diff::Tensor&) { ++expected; });
  if (tensorCount != expected) {
    throw CheckpointError("checkpoint tensor count mismatch");
  }
  params.forEachParameter([&in, &path](const std::string& name, diff::Tensor& tensor) {
    auto nameLen = detail::readRaw<std::int32_t>(in);
    std::string stored(static_cast<std::size_t>(nameLen), '\0');
    in.read(stored.data(), nameLen);
    auto rows = detail::readRaw<std::int32_t>(in);
    auto cols = detail::readRaw<std::int32_t>(in);
    if (!in || stored != name || rows != tensor.rows() || cols != tensor.cols()) {
      throw CheckpointError("checkpoint layout mismatch at tensor '" + stored + "' in " +
                            path.string());
    }
    in.read(reinterpret_cast<char*>(tensor.values().data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!in) {
      throw CheckpointError("checkpoint file is truncated");
    }
  });
  return params;
}

// Guards score-table construction and training updates against mixing a
// rollout batch with parameters from a different snapshot.
inline void requireFresh(const RolloutBatch& batch, const PolicyParams& params) {
  for (const auto& group : batch.rollouts) {
    for (const RolloutRecord& record : group) {
      if (record.behaviorVersionTag != params.versionTag) {
        throw StalenessError("rollout batch was sampled at version " +
                             std::to_string(record.behaviorVersionTag) +
                             " but parameters are at version " +
                             std::to_string(params.versionTag));
      }
    }
  }
}

}  // namespace tor::policy
