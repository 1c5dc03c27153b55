#include "affinity/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "affinity/errors.hpp"
#include "json.hpp"

namespace affinity {

using nlohmann::json;

Vocabulary::Vocabulary() {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "L", "A", "G", "V", "E",
             "S",     "I",     "K",     "R",     "D",      "T", "P", "N", "Q", "F",
             "Y",     "M",     "H",     "C",     "W",      "X", "U", "B", "Z", "O"};
  std::fill(std::begin(char_ids_), std::end(char_ids_), kUnk);
  for (int id = 5; id < static_cast<int>(tokens_.size()); ++id)
    char_ids_[static_cast<unsigned char>(tokens_[static_cast<size_t>(id)][0])] = id;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("vocabulary: no token with id " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::id_of(char residue) const { return char_ids_[static_cast<unsigned char>(residue)]; }

bool Vocabulary::is_residue(char c) const { return char_ids_[static_cast<unsigned char>(c)] != kUnk; }

const Vocabulary& build_vocabulary() {
  static const Vocabulary vocab;
  return vocab;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

TokenizedSample tokenize(const std::string& sequence, const Vocabulary& vocab, int max_len) {
  if (max_len < 3) throw ValueError("tokenize: max_len must be >= 3, got " + std::to_string(max_len));
  if (sequence.empty()) throw DegenerateInputError("tokenize: empty sequence");
  TokenizedSample s;
  s.input_ids.reserve(static_cast<size_t>(max_len));
  s.input_ids.push_back(Vocabulary::kCls);
  const size_t residues = std::min(sequence.size(), static_cast<size_t>(max_len) - 2);
  for (size_t i = 0; i < residues; ++i) s.input_ids.push_back(vocab.id_of(sequence[i]));
  s.input_ids.push_back(Vocabulary::kSep);
  const size_t real = s.input_ids.size();
  s.input_ids.resize(static_cast<size_t>(max_len), Vocabulary::kPad);
  s.attention_mask.assign(static_cast<size_t>(max_len), 0);
  std::fill(s.attention_mask.begin(), s.attention_mask.begin() + static_cast<long>(real), 1);
  return s;
}

std::string detokenize(const TokenizedSample& sample, const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < sample.input_ids.size(); ++i) {
    const int id = sample.input_ids[i];
    if (id == Vocabulary::kCls) continue;
    if (id == Vocabulary::kSep || id == Vocabulary::kPad) break;
    out += vocab.token(id);
  }
  return out;
}

namespace {

void validate_sample(const TokenizedSample& s, size_t line_no, int vocab_size) {
  const std::string where = "line " + std::to_string(line_no);
  if (s.input_ids.empty()) throw ParseError(where + ": empty input_ids");
  if (s.input_ids.size() != s.attention_mask.size())
    throw ParseError(where + ": attention_mask length " + std::to_string(s.attention_mask.size()) +
                     " != input_ids length " + std::to_string(s.input_ids.size()));
  bool any_on = false;
  for (int m : s.attention_mask) {
    if (m != 0 && m != 1) throw ParseError(where + ": attention_mask entries must be 0 or 1");
    any_on |= m == 1;
  }
  if (!any_on) throw ParseError(where + ": attention_mask has no live positions");
  for (int id : s.input_ids)
    if (id < 0 || id >= vocab_size)
      throw VocabularyError(where + ": token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab_size));
  if (s.label != 0 && s.label != 1)
    throw LabelError(where + ": label must be 0 or 1, got " + std::to_string(s.label));
}

}  // namespace

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  Dataset ds;
  ds.provenance = path;
  std::string line;
  size_t line_no = 0;
  const int vocab_size = build_vocabulary().size();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    for (const char* field : {"input_ids", "attention_mask", "label"})
      if (!rec.contains(field))
        throw ParseError("line " + std::to_string(line_no) + ": missing field " + field);
    TokenizedSample s;
    try {
      s.input_ids = rec["input_ids"].get<std::vector<int>>();
      s.attention_mask = rec["attention_mask"].get<std::vector<int>>();
      s.label = rec["label"].get<int>();
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": bad field type: " + e.what());
    }
    // token_type_ids is accepted and discarded; the backbone has no segment
    // embeddings.
    validate_sample(s, line_no, vocab_size);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ParseError(path + ": no records");
  return ds;
}

void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& s : ds.samples) {
    json rec;
    rec["input_ids"] = s.input_ids;
    rec["attention_mask"] = s.attention_mask;
    rec["label"] = s.label;
    out << rec.dump() << "\n";
  }
  if (!out) throw Error("write failed for " + path);
}

std::vector<size_t> FoldAssignment::fold_indices(int fold) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) out.push_back(i);
  return out;
}

std::vector<size_t> FoldAssignment::complement_indices(int fold) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != fold) out.push_back(i);
  return out;
}

FoldAssignment stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed) {
  if (k < 2) throw ValueError("stratified_kfold: k must be >= 2, got " + std::to_string(k));
  std::vector<size_t> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw LabelError("stratified_kfold: label must be 0 or 1, got " + std::to_string(labels[i]));
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < static_cast<size_t>(k))
      throw StratificationError("stratified_kfold: class " + std::to_string(c) + " has " +
                                std::to_string(by_class[c].size()) + " members, fewer than k=" +
                                std::to_string(k));
  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.assignment.assign(labels.size(), -1);
  Rng rng(seed);
  for (int c = 0; c < 2; ++c) {
    rng.shuffle(by_class[c]);
    for (size_t j = 0; j < by_class[c].size(); ++j)
      fa.assignment[by_class[c][j]] = static_cast<int>(j % static_cast<size_t>(k));
  }
  return fa;
}

std::string fold_assignment_to_json(const FoldAssignment& fa) {
  json j;
  j["seed"] = fa.seed;
  j["k"] = fa.k;
  j["assignment"] = fa.assignment;
  return j.dump();
}

Batch make_batch(const Dataset& ds, const std::vector<size_t>& indices) {
  Batch b;
  b.batch = static_cast<int>(indices.size());
  size_t longest = 0;
  for (size_t idx : indices) {
    size_t live = 0;
    const auto& m = ds.samples[idx].attention_mask;
    for (size_t j = 0; j < m.size(); ++j)
      if (m[j] == 1) live = j + 1;
    longest = std::max(longest, live);
  }
  b.seq_len = static_cast<int>(longest);
  b.input_ids.assign(indices.size() * longest, Vocabulary::kPad);
  b.attention_mask.assign(indices.size() * longest, 0.0f);
  b.labels.reserve(indices.size());
  for (size_t r = 0; r < indices.size(); ++r) {
    const auto& s = ds.samples[indices[r]];
    b.labels.push_back(s.label);
    const size_t n = std::min(longest, s.input_ids.size());
    for (size_t j = 0; j < n; ++j) {
      b.input_ids[r * longest + j] = s.input_ids[j];
      b.attention_mask[r * longest + j] = static_cast<float>(s.attention_mask[j]);
    }
  }
  return b;
}

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, Rng& rng, bool shuffle) {
  if (batch_size < 1) throw ValueError("make_batches: batch_size must be >= 1");
  std::vector<size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) rng.shuffle(order);
  std::vector<Batch> out;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    out.push_back(make_batch(ds, {order.begin() + static_cast<long>(start),
                                  order.begin() + static_cast<long>(end)}));
  }
  return out;
}

namespace {

// Random backgrounds draw from the 20 standard residues (table ids 5..24).
constexpr const char* kStandardResidues = "LAGVESIKRDTPNQFYMHCW";

std::string random_sequence(int len, Rng& rng) {
  std::string s(static_cast<size_t>(len), 'A');
  for (auto& c : s) c = kStandardResidues[rng.bounded(20)];
  return s;
}

}  // namespace

Dataset synth_generate(int n, const std::string& motif, int seq_len, double noise, Rng& rng) {
  if (n < 1) throw ValueError("synth_generate: n must be >= 1");
  if (motif.empty() || static_cast<int>(motif.size()) >= seq_len)
    throw ValueError("synth_generate: motif length must be in [1, seq_len)");
  if (noise < 0.0 || noise >= 0.5)
    throw ValueError("synth_generate: noise must be in [0, 0.5), got " + std::to_string(noise));
  const Vocabulary& vocab = build_vocabulary();
  for (char c : motif)
    if (!vocab.is_residue(c))
      throw ValueError(std::string("synth_generate: motif character '") + c + "' is not a residue");

  const int max_len = seq_len + 2;  // [CLS] + residues + [SEP]
  Dataset ds;
  ds.samples.reserve(static_cast<size_t>(n));
  std::ostringstream prov;
  prov << "synth(n=" << n << ", motif=" << motif << ", seq_len=" << seq_len << ", noise=" << noise
       << ")";
  ds.provenance = prov.str();

  const int positives = n / 2 + (n % 2);
  for (int i = 0; i < n; ++i) {
    const bool binder = i < positives;
    std::string seq;
    if (binder) {
      seq = random_sequence(seq_len, rng);
      const size_t pos = rng.bounded(static_cast<uint64_t>(seq_len - static_cast<int>(motif.size()) + 1));
      seq.replace(pos, motif.size(), motif);
    } else {
      do {
        seq = random_sequence(seq_len, rng);
      } while (seq.find(motif) != std::string::npos);
    }
    TokenizedSample s = tokenize(seq, vocab, max_len);
    int label = binder ? 1 : 0;
    if (noise > 0.0 && rng.bernoulli(noise)) label = 1 - label;
    s.label = label;
    ds.samples.push_back(std::move(s));
  }
  std::vector<size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  Dataset shuffled;
  shuffled.provenance = ds.provenance;
  shuffled.samples.reserve(ds.samples.size());
  for (size_t idx : order) shuffled.samples.push_back(std::move(ds.samples[idx]));
  return shuffled;
}

Dataset subset(const Dataset& ds, const std::vector<size_t>& indices, const std::string& provenance) {
  Dataset out;
  out.provenance = provenance;
  out.samples.reserve(indices.size());
  for (size_t idx : indices) out.samples.push_back(ds.samples[idx]);
  return out;
}

}  // namespace affinity
