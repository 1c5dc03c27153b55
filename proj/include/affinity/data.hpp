#pragma once

#include <optional>
#include <string>
#include <vector>

#include "affinity/rng.hpp"

namespace affinity {

// The 30-token table the pre-tokenized antibody corpora use: five specials
// followed by 25 residue symbols, id = position.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;

  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  // Residue character -> id; unknown characters map to [UNK].
  int id_of(char residue) const;
  bool is_residue(char c) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  int char_ids_[256];
};

const Vocabulary& build_vocabulary();

// One record: token ids, 0/1 attention mask of the same length, binary label
// (0 = low affinity, 1 = binder). Unlabeled samples use label -1.
struct TokenizedSample {
  std::vector<int> input_ids;
  std::vector<int> attention_mask;
  int label = -1;
};

struct Dataset {
  std::vector<TokenizedSample> samples;
  std::string provenance;

  size_t size() const { return samples.size(); }
  std::vector<int> labels() const;
};

// [CLS] + residue ids + [SEP], truncated to max_len (the [SEP] survives
// truncation), padded with [PAD]; mask is 1 over non-pad positions.
TokenizedSample tokenize(const std::string& sequence, const Vocabulary& vocab, int max_len);

// Recovers the residue span between [CLS] and [SEP] as a string.
std::string detokenize(const TokenizedSample& sample, const Vocabulary& vocab);

// JSONL: {"input_ids": [...], "attention_mask": [...], "label": 0|1} per
// line; token_type_ids is accepted and discarded.
Dataset load_jsonl(const std::string& path);
void save_jsonl(const Dataset& ds, const std::string& path);

struct FoldAssignment {
  int k = 0;
  uint64_t seed = 0;
  std::vector<int> assignment;  // sample index -> fold id

  std::vector<size_t> fold_indices(int fold) const;
  std::vector<size_t> complement_indices(int fold) const;
};

// Per-class shuffle, then round-robin over folds; deterministic given seed.
FoldAssignment stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed);

std::string fold_assignment_to_json(const FoldAssignment& fa);

// Dense batch, padded to the longest member with [PAD]/mask 0.
struct Batch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> input_ids;       // batch x seq_len, row-major
  std::vector<float> attention_mask;  // batch x seq_len
  std::vector<int> labels;
};

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, Rng& rng, bool shuffle);
Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices);

// Balanced synthetic motif task: binders contain the motif at a random
// position, low-affinity samples are motif-free; labels are then flipped
// with probability `noise`.
Dataset synth_generate(int n, const std::string& motif, int seq_len, double noise, Rng& rng);

Dataset subset(const Dataset& ds, const std::vector<size_t>& indices, const std::string& provenance);

}  // namespace affinity
