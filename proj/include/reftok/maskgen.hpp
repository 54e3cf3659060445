#pragma once

// Toy masked-token generator over quantized target grids, conditioned on
// continuous reference tokens by sequence concatenation. Training predicts
// randomly masked target indices with cross-entropy on the masked positions
// only; sampling runs iterative parallel decoding under a cosine unmasking
// schedule (single-step schedules degenerate to one argmax fill).

#include <cstdint>
#include <string>
#include <vector>

#include "reftok/model.hpp"
#include "reftok/optim.hpp"

namespace reftok {

// Fraction of target sites still masked after `step` of `total` decode
// steps: cos(pi/2 * step/total). 1 at step 0, 0 at step == total,
// monotone non-increasing in between.
double mask_fraction(int step, int total);

struct GenSchedule {
    int total_steps = 8;
    double temperature = 4.5;  // scales the Gumbel confidence noise, annealed to 0
};

// One clip exported through a frozen tokenizer: continuous reference tokens
// plus the discrete target grid.
struct TokenDatasetRecord {
    MatF h_r;                  // reference tokens, n_ref_sites x embed_dim
    GridShape grid;            // target token lattice
    std::vector<int> indices;  // grid.sites() codes
    std::string source_id;

    void validate(int vocab) const;  // indices within [0, vocab)
};

std::vector<TokenDatasetRecord> build_token_dataset(const TokenizerModel& tokenizer,
                                                    const std::vector<VideoClip>& clips);

// ".rtkg" file: concatenated records, each "RTKG" magic, u32 tau/eta/omega,
// u32 indices, u32 h_r rows/cols, f32 h_r block, then the source id string.
void save_token_dataset(const std::vector<TokenDatasetRecord>& records, const std::string& path);
std::vector<TokenDatasetRecord> load_token_dataset(const std::string& path);

struct GenConfig {
    int dim = 256;
    int depth = 6;
    int heads = 4;
    int mlp_ratio = 4;
    int vocab = 0;     // tokenizer codebook size; the mask token is id == vocab
    int cond_dim = 0;  // width of the reference token rows
};

class GeneratorModel {
public:
    GeneratorModel(GenConfig cfg, std::uint64_t seed);

    GenConfig cfg;
    ParamStore params;

    // Logits over the vocabulary at every target site. ids holds one entry
    // per site; masked sites carry the id cfg.vocab.
    template <class S>
    ad::Var<S> logits(Ctx<S>& ctx, const MatF& h_r, const std::vector<int>& ids,
                      const GridShape& grid) const;

    // Inference-mode forward.
    MatF predict_logits(const MatF& h_r, const std::vector<int>& ids, const GridShape& grid) const;

    // Checkpoint container shares the tokenizer's layout but is tagged as a
    // generator; each loader rejects the other kind.
    void save_checkpoint(const std::string& path, int step) const;
    int load_checkpoint(const std::string& path);  // returns stored step
    static GenConfig peek_config(const std::string& path);

private:
    LinearSpec cond_;
    LinearSpec head_;
    TransformerSpec net_;
};

struct GenTrainConfig {
    int steps = 400;
    int batch_size = 4;  // records per step
    double lr = 1e-3;
    int warmup = 20;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

struct GenStepMetrics {
    int step = 0;
    double loss = 0;      // masked cross-entropy
    double accuracy = 0;  // masked argmax accuracy on the step's batch
};

class GeneratorTrainer {
public:
    GeneratorTrainer(GeneratorModel& model, GenTrainConfig cfg);

    // One optimizer step over a batch of records. For each record a masking
    // ratio is drawn as cos(pi/2 * u), u ~ U[0,1), and that share of sites
    // (at least one) is replaced by the mask token; the loss reads only the
    // masked positions.
    GenStepMetrics train_step(const std::vector<const TokenDatasetRecord*>& batch);

    void run(const std::vector<TokenDatasetRecord>& dataset, std::ostream* log);

    int step() const { return step_; }
    void set_step(int s);
    const std::vector<GenStepMetrics>& history() const { return history_; }

private:
    GeneratorModel& model_;
    GenTrainConfig cfg_;
    AdamW opt_;
    int step_ = 0;
    std::vector<GenStepMetrics> history_;
};

// Masked argmax accuracy over a record set: `fraction` of each record's
// sites is masked (deterministically per record index and seed) and the
// model must recover the true indices there.
double masked_accuracy(const GeneratorModel& model, const std::vector<TokenDatasetRecord>& records,
                       double fraction, std::uint64_t seed);

// Iterative parallel decode. Starts all-masked; after step s the number of
// fixed sites is round(N * (1 - mask_fraction(s, total))), chosen by argmax
// log-probability plus temperature-annealed Gumbel noise. Deterministic for
// a given rng seed. unmasked_after, when given, records the fixed-site
// count after every step; fix_order records the sites in the order they
// were committed.
std::vector<int> generate_tokens(const GeneratorModel& model, const MatF& h_r,
                                 const GridShape& grid, const GenSchedule& schedule, Rng& rng,
                                 std::vector<int>* unmasked_after = nullptr,
                                 std::vector<int>* fix_order = nullptr);

}  // namespace reftok
