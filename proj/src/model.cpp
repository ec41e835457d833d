#include "memvad/model.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace memvad {

using nlohmann::json;

Task task_from_string(const std::string& s) {
    if (s == "reconstruction") return Task::reconstruction;
    if (s == "prediction") return Task::prediction;
    if (s == "denoise_reconstruction") return Task::denoise_reconstruction;
    throw std::invalid_argument("unknown task: " + s);
}

std::string to_string(Task task) {
    switch (task) {
        case Task::reconstruction: return "reconstruction";
        case Task::prediction: return "prediction";
        case Task::denoise_reconstruction: return "denoise_reconstruction";
    }
    throw std::logic_error("unreachable task value");
}

SkipProbe::Mode probe_mode_from_string(const std::string& s) {
    if (s == "passthrough") return SkipProbe::Mode::passthrough;
    if (s == "zeros") return SkipProbe::Mode::zeros;
    if (s == "ones") return SkipProbe::Mode::ones;
    if (s == "random") return SkipProbe::Mode::random;
    throw std::invalid_argument("unknown skip probe mode: " + s);
}

std::array<int, 4> ModelConfig::stage_widths() const {
    auto at_least4 = [](int v) { return std::max(4, v); };
    return {at_least4(feature_dim / 8), at_least4(feature_dim / 4), at_least4(feature_dim / 2),
            feature_dim};
}

void ModelConfig::validate() const {
    if (input_size < 8 || input_size % 8 != 0)
        throw std::invalid_argument("ModelConfig: input_size must be a positive multiple of 8");
    if (image_channels < 1) throw std::invalid_argument("ModelConfig: image_channels must be >= 1");
    if (task == Task::prediction && input_frames != 4)
        throw std::invalid_argument("ModelConfig: prediction requires input_frames == 4");
    if (task != Task::prediction && input_frames != 1)
        throw std::invalid_argument("ModelConfig: " + to_string(task) +
                                    " requires input_frames == 1");
    if (task == Task::reconstruction && use_skips)
        throw std::invalid_argument(
            "ModelConfig: plain reconstruction has no skip connections; use "
            "denoise_reconstruction for the skip variant");
    if (!(noise_ratio >= 0.0 && noise_ratio < 1.0))
        throw std::invalid_argument("ModelConfig: noise_ratio must be in [0, 1)");
    if (feature_dim < 1) throw std::invalid_argument("ModelConfig: feature_dim must be >= 1");
    if (use_memory && mem_items < 2)
        throw std::invalid_argument("ModelConfig: memory needs at least 2 items");
}

ModelConfig default_model_config(Task task) {
    ModelConfig c;
    c.task = task;
    switch (task) {
        case Task::prediction:
            c.input_frames = 4;
            c.use_skips = true;
            break;
        case Task::reconstruction:
            c.input_frames = 1;
            c.use_skips = false;
            break;
        case Task::denoise_reconstruction:
            c.input_frames = 1;
            c.use_skips = true;
            c.noise_ratio = 0.25;
            break;
    }
    return c;
}

Tensor reads_to_tensor(const std::vector<Mat>& reads, int h, int w) {
    if (reads.empty()) throw std::invalid_argument("reads_to_tensor: no samples");
    const int c = static_cast<int>(reads[0].cols());
    Tensor out(static_cast<int>(reads.size()), c, h, w);
    for (int s = 0; s < out.n; ++s) {
        const Mat& r = reads[s];
        if (r.rows() != static_cast<long>(h) * w || r.cols() != c)
            throw std::invalid_argument("reads_to_tensor: sample shape mismatch");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    out.at(s, ch, y, x) = static_cast<float>(r(y * w + x, ch));
    }
    return out;
}

Tensor fuse(const Tensor& features, const Tensor& read_tensor) {
    if (!features.same_shape(read_tensor))
        throw std::invalid_argument("fuse: features " + features.shape_str() +
                                    " vs read " + read_tensor.shape_str());
    return concat_channels(features, read_tensor);
}

namespace {

QueryMap features_to_queries(const Tensor& features, int sample) {
    Mat q(static_cast<long>(features.h) * features.w, features.c);
    for (int y = 0; y < features.h; ++y)
        for (int x = 0; x < features.w; ++x)
            for (int c = 0; c < features.c; ++c)
                q(y * features.w + x, c) = features.at(sample, c, y, x);
    return QueryMap(std::move(q), features.h, features.w);
}

Tensor probe_tensor(const Tensor& like, SkipProbe::Mode mode, std::uint64_t seed, int which) {
    Tensor out = Tensor::zeros_like(like);
    switch (mode) {
        case SkipProbe::Mode::passthrough: return like;
        case SkipProbe::Mode::zeros: return out;
        case SkipProbe::Mode::ones:
            std::fill(out.data.begin(), out.data.end(), 1.0f);
            return out;
        case SkipProbe::Mode::random: {
            std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(which));
            std::normal_distribution<float> g(0.0f, 1.0f);
            for (auto& v : out.data) v = g(rng);
            return out;
        }
    }
    throw std::logic_error("unreachable probe mode");
}

}  // namespace

EncoderDecoder::EncoderDecoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto w = config_.stage_widths();
    const int in_ch = config_.in_channels();

    enc_.reserve(7);
    enc_.emplace_back("enc0", in_ch, w[0], 1, true, true, rng);
    enc_.emplace_back("enc1", w[0], w[1], 2, true, true, rng);
    enc_.emplace_back("enc2", w[1], w[1], 1, true, true, rng);
    enc_.emplace_back("enc3", w[1], w[2], 2, true, true, rng);
    enc_.emplace_back("enc4", w[2], w[2], 1, true, true, rng);
    enc_.emplace_back("enc5", w[2], w[3], 2, true, true, rng);
    enc_.emplace_back("enc6", w[3], w[3], 1, true, true, rng);

    const int dec_in = config_.use_memory ? 2 * w[3] : w[3];
    dec_.reserve(4);
    dec_.emplace_back("dec0", dec_in, w[3], 1, true, true, rng);
    const int u1_in = w[3] + (config_.use_skips ? w[2] : 0);
    const int u2_in = w[2] + (config_.use_skips ? w[1] : 0);
    const int u3_in = w[1] + (config_.use_skips ? w[0] : 0);
    dec_.emplace_back("dec1", u1_in, w[2], 1, true, true, rng);
    dec_.emplace_back("dec2", u2_in, w[1], 1, true, true, rng);
    dec_.emplace_back("dec3", u3_in, w[0], 1, true, true, rng);
    head_.emplace("head", w[0], config_.image_channels, 3, 1, 1, rng);
}

EncodeResult EncoderDecoder::encode(const Tensor& input, bool train) {
    if (input.c != config_.in_channels())
        throw std::invalid_argument("encode: expected " + std::to_string(config_.in_channels()) +
                                    " channels (input_frames x image_channels), got " +
                                    std::to_string(input.c));
    if (input.h % 8 != 0 || input.w % 8 != 0)
        throw std::invalid_argument("encode: spatial size must be divisible by 8");

    EncodeResult result;
    Tensor x = enc_[0].forward(input, train);
    Tensor skip1 = x;
    x = enc_[1].forward(x, train);
    x = enc_[2].forward(x, train);
    Tensor skip2 = x;
    x = enc_[3].forward(x, train);
    x = enc_[4].forward(x, train);
    Tensor skip3 = x;
    x = enc_[5].forward(x, train);
    result.features = enc_[6].forward(x, train);
    if (config_.use_skips) {
        result.skips = {std::move(skip1), std::move(skip2), std::move(skip3)};
    }
    return result;
}

Tensor EncoderDecoder::decode(const Tensor& fused, const std::vector<Tensor>* skips, bool train,
                              const SkipProbe* probe) {
    const int expected = config_.use_memory ? 2 * config_.feature_dim : config_.feature_dim;
    if (fused.c != expected)
        throw std::invalid_argument("decode: expected fused depth " + std::to_string(expected) +
                                    ", got " + std::to_string(fused.c));
    if (config_.use_skips && (!skips || skips->size() != 3))
        throw std::invalid_argument("decode: this variant needs the three skip tensors");

    skip_cache_.clear();
    skip_overridden_ = {false, false, false};
    if (config_.use_skips) {
        Tensor s1 = (*skips)[0];
        Tensor s2 = (*skips)[1];
        Tensor s3 = (*skips)[2];
        if (probe) {
            if (probe->skip2 != SkipProbe::Mode::passthrough) {
                s2 = probe_tensor(s2, probe->skip2, probe->seed, 2);
                skip_overridden_[1] = true;
            }
            if (probe->skip3 != SkipProbe::Mode::passthrough) {
                s3 = probe_tensor(s3, probe->skip3, probe->seed, 3);
                skip_overridden_[2] = true;
            }
        }
        skip_cache_ = {std::move(s1), std::move(s2), std::move(s3)};
    }

    Tensor x = dec_[0].forward(fused, train);
    x = up_[0].forward(x);
    if (config_.use_skips) x = concat_channels(x, skip_cache_[2]);
    x = dec_[1].forward(x, train);
    x = up_[1].forward(x);
    if (config_.use_skips) x = concat_channels(x, skip_cache_[1]);
    x = dec_[2].forward(x, train);
    x = up_[2].forward(x);
    if (config_.use_skips) x = concat_channels(x, skip_cache_[0]);
    x = dec_[3].forward(x, train);
    x = head_->forward(x);
    return out_act_.forward(x);
}

ForwardResult EncoderDecoder::forward(const Tensor& input, const MemoryBank* bank, bool train,
                                      const SkipProbe* probe) {
    cached_train_ = train;
    EncodeResult enc = encode(input, train);
    feat_h_ = enc.features.h;
    feat_w_ = enc.features.w;

    ForwardResult result;
    mem_cache_ = MemoryArtifacts{};
    raw_query_cache_.clear();
    if (config_.use_memory) {
        if (!bank) throw std::invalid_argument("forward: memory variant needs a MemoryBank");
        if (bank->dim() != config_.feature_dim)
            throw std::invalid_argument("forward: bank dimensionality != feature_dim");
        bank_items_cache_ = bank->items;
        std::vector<Mat> reads;
        reads.reserve(input.n);
        for (int s = 0; s < input.n; ++s) {
            QueryMap raw = features_to_queries(enc.features, s);
            raw_query_cache_.push_back(raw);
            QueryMap effective = config_.normalize_queries ? normalize_queries(raw) : raw;
            Mat scores = correlate(*bank, effective);
            MatchWeights w = match_weights(scores);
            UpdateWeights v = update_weights(scores);
            reads.push_back(read(*bank, w));
            mem_cache_.queries.push_back(std::move(effective));
            mem_cache_.scores.push_back(std::move(scores));
            mem_cache_.match.push_back(std::move(w));
            mem_cache_.updatew.push_back(std::move(v));
        }
        Tensor read_tensor = reads_to_tensor(reads, feat_h_, feat_w_);
        Tensor fused = fuse(enc.features, read_tensor);
        result.output = decode(fused, config_.use_skips ? &enc.skips : nullptr, train, probe);
    } else {
        result.output = decode(enc.features, config_.use_skips ? &enc.skips : nullptr, train, probe);
    }
    result.memory = mem_cache_;
    return result;
}

void EncoderDecoder::zero_grad() {
    for (nn::Param* p : parameters()) p->zero_grad();
    bank_grad_ = Mat();
}

Tensor EncoderDecoder::query_grad_to_tensor(const std::vector<Mat>& d_queries, int h,
                                            int w) const {
    Tensor out(static_cast<int>(d_queries.size()), config_.feature_dim, h, w);
    for (int s = 0; s < out.n; ++s)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < out.c; ++c)
                    out.at(s, c, y, x) = static_cast<float>(d_queries[s](y * w + x, c));
    return out;
}

void EncoderDecoder::backward(const Tensor& d_output, const AuxGrads* aux) {
    if (!cached_train_)
        throw std::logic_error("backward: requires a preceding train-mode forward");

    Tensor g = out_act_.backward(d_output);
    g = head_->backward(g);
    g = dec_[3].backward(g);

    Tensor skip_grads[3];
    auto pop_skip = [&](int idx) {
        if (!config_.use_skips) return;
        const int main_c = g.c - skip_cache_[idx].c;
        Tensor main_grad, skip_grad;
        split_channels(g, main_c, &main_grad, &skip_grad);
        skip_grads[idx] = std::move(skip_grad);
        g = std::move(main_grad);
    };

    pop_skip(0);
    g = up_[2].backward(g);
    g = dec_[2].backward(g);
    pop_skip(1);
    g = up_[1].backward(g);
    g = dec_[1].backward(g);
    pop_skip(2);
    g = up_[0].backward(g);
    Tensor d_fused = dec_[0].backward(g);

    Tensor d_features;
    if (config_.use_memory) {
        Tensor d_feat_direct, d_read_tensor;
        split_channels(d_fused, config_.feature_dim, &d_feat_direct, &d_read_tensor);

        const int n = d_read_tensor.n;
        const int K = feat_h_ * feat_w_;
        bank_grad_ = Mat::Zero(bank_items_cache_.rows(), bank_items_cache_.cols());
        MemoryBank bank;
        bank.items = bank_items_cache_;
        std::vector<Mat> d_raw_queries(n);
        for (int s = 0; s < n; ++s) {
            Mat d_read(K, config_.feature_dim);
            for (int y = 0; y < feat_h_; ++y)
                for (int x = 0; x < feat_w_; ++x)
                    for (int c = 0; c < config_.feature_dim; ++c)
                        d_read(y * feat_w_ + x, c) = d_read_tensor.at(s, c, y, x);

            Mat d_w, d_items_read;
            read_backward(bank, mem_cache_.match[s], d_read, &d_w, &d_items_read);
            Mat d_scores = match_weights_backward(mem_cache_.match[s], d_w);
            if (aux && !aux->d_updatew.empty())
                d_scores += update_weights_backward(mem_cache_.updatew[s], aux->d_updatew[s]);
            if (aux && !aux->d_scores.empty()) d_scores += aux->d_scores[s];
            Mat d_q, d_items_corr;
            correlate_backward(bank, mem_cache_.queries[s], d_scores, &d_q, &d_items_corr);
            if (aux && !aux->d_queries.empty()) d_q += aux->d_queries[s];
            bank_grad_ += d_items_read + d_items_corr;

            d_raw_queries[s] = config_.normalize_queries
                                   ? normalize_queries_backward(raw_query_cache_[s], d_q)
                                   : std::move(d_q);
        }
        Tensor d_from_memory = query_grad_to_tensor(d_raw_queries, feat_h_, feat_w_);
        d_features = d_feat_direct;
        for (std::size_t i = 0; i < d_features.size(); ++i)
            d_features.data[i] += d_from_memory.data[i];
    } else {
        d_features = std::move(d_fused);
    }

    g = enc_[6].backward(d_features);
    g = enc_[5].backward(g);
    if (config_.use_skips && !skip_overridden_[2])
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += skip_grads[2].data[i];
    g = enc_[4].backward(g);
    g = enc_[3].backward(g);
    if (config_.use_skips && !skip_overridden_[1])
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += skip_grads[1].data[i];
    g = enc_[2].backward(g);
    g = enc_[1].backward(g);
    if (config_.use_skips)
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += skip_grads[0].data[i];
    enc_[0].backward(g);
}

std::vector<nn::Param*> EncoderDecoder::parameters() {
    std::vector<nn::Param*> params;
    std::vector<nn::BatchNorm2d*> bns;
    for (auto& b : enc_) b.collect(params, bns);
    for (auto& b : dec_) b.collect(params, bns);
    params.push_back(&head_->weight);
    params.push_back(&head_->bias);
    return params;
}

std::vector<std::pair<std::string, std::vector<float>*>> EncoderDecoder::state_entries() {
    std::vector<std::pair<std::string, std::vector<float>*>> entries;
    std::vector<nn::Param*> params;
    std::vector<nn::BatchNorm2d*> bns;
    for (auto& b : enc_) b.collect(params, bns);
    for (auto& b : dec_) b.collect(params, bns);
    params.push_back(&head_->weight);
    params.push_back(&head_->bias);
    for (nn::Param* p : params) entries.emplace_back(p->name, &p->value);
    for (nn::BatchNorm2d* bn : bns) {
        entries.emplace_back(bn->name + ".running_mean", &bn->running_mean);
        entries.emplace_back(bn->name + ".running_var", &bn->running_var);
    }
    return entries;
}

// ---- config JSON ------------------------------------------------------------

std::string model_config_to_json(const ModelConfig& c) {
    json j;
    j["task"] = to_string(c.task);
    j["use_memory"] = c.use_memory;
    j["use_skips"] = c.use_skips;
    j["input_frames"] = c.input_frames;
    j["image_channels"] = c.image_channels;
    j["input_size"] = c.input_size;
    j["mem_items"] = c.mem_items;
    j["feature_dim"] = c.feature_dim;
    j["noise_ratio"] = c.noise_ratio;
    j["normalize_queries"] = c.normalize_queries;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.task = task_from_string(j.at("task").get<std::string>());
    c.use_memory = j.at("use_memory").get<bool>();
    c.use_skips = j.at("use_skips").get<bool>();
    c.input_frames = j.at("input_frames").get<int>();
    c.image_channels = j.at("image_channels").get<int>();
    c.input_size = j.at("input_size").get<int>();
    c.mem_items = j.at("mem_items").get<int>();
    c.feature_dim = j.at("feature_dim").get<int>();
    c.noise_ratio = j.at("noise_ratio").get<double>();
    c.normalize_queries = j.at("normalize_queries").get<bool>();
    c.validate();
    return c;
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'V', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ofstream& f, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<std::uint8_t*>(&value);
        std::reverse(p, p + sizeof(T));
    }
    f.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T value;
    f.read(reinterpret_cast<char*>(&value), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<std::uint8_t*>(&value);
        std::reverse(p, p + sizeof(T));
    }
    return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, EncoderDecoder& model,
                     const MemoryBank* bank) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    f.write(kCkptMagic, sizeof(kCkptMagic));
    put<std::uint32_t>(f, 1);  // version

    const std::string cfg = model_config_to_json(model.config());
    put<std::uint32_t>(f, static_cast<std::uint32_t>(cfg.size()));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    auto entries = model.state_entries();
    put<std::uint32_t>(f, static_cast<std::uint32_t>(entries.size()));
    for (auto& [name, values] : entries) {
        put<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint64_t>(f, static_cast<std::uint64_t>(values->size()));
        if constexpr (std::endian::native == std::endian::little) {
            f.write(reinterpret_cast<const char*>(values->data()),
                    static_cast<std::streamsize>(values->size() * sizeof(float)));
        } else {
            for (float v : *values) put<float>(f, v);
        }
    }

    const bool has_bank = model.config().use_memory;
    put<std::uint8_t>(f, has_bank ? 1 : 0);
    if (has_bank) {
        if (!bank) throw std::invalid_argument("save_checkpoint: memory variant needs a bank");
        std::vector<std::uint8_t> bytes;
        write_bank_bytes(*bank, bytes);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path.string());
    const auto version = get<std::uint32_t>(f);
    if (version != 1)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));

    const auto cfg_len = get<std::uint32_t>(f);
    std::string cfg_text(cfg_len, '\0');
    f.read(cfg_text.data(), cfg_len);

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(cfg_text);
    ckpt.model = std::make_unique<EncoderDecoder>(ckpt.config, /*seed=*/0);

    auto entries = ckpt.model->state_entries();
    const auto n_entries = get<std::uint32_t>(f);
    if (n_entries != entries.size())
        throw std::runtime_error("load_checkpoint: parameter count mismatch");
    for (auto& [name, values] : entries) {
        const auto name_len = get<std::uint32_t>(f);
        std::string got_name(name_len, '\0');
        f.read(got_name.data(), name_len);
        if (got_name != name)
            throw std::runtime_error("load_checkpoint: expected parameter " + name + ", found " +
                                     got_name);
        const auto count = get<std::uint64_t>(f);
        if (count != values->size())
            throw std::runtime_error("load_checkpoint: size mismatch for " + name);
        if constexpr (std::endian::native == std::endian::little) {
            f.read(reinterpret_cast<char*>(values->data()),
                   static_cast<std::streamsize>(count * sizeof(float)));
        } else {
            for (auto& v : *values) v = get<float>(f);
        }
    }

    const auto has_bank = get<std::uint8_t>(f);
    if (has_bank) {
        std::vector<std::uint8_t> rest((std::istreambuf_iterator<char>(f)),
                                       std::istreambuf_iterator<char>());
        std::size_t consumed = 0;
        ckpt.bank = read_bank_bytes(rest.data(), rest.size(), &consumed);
    }
    if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path.string());
    return ckpt;
}

}  // namespace memvad
