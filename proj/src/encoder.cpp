#include "crel/encoder.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace crel::encoder {

const char* TokenTable::special_name(int id) {
    switch (id) {
        case kPad: return "[PAD]";
        case kCls: return "[CLS]";
        case kSep: return "[SEP]";
        case kUnk: return "[UNK]";
    }
    return nullptr;
}

TokenTable::TokenTable(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (int s = 0; s < 4; ++s) {
        if (static_cast<std::size_t>(s) >= tokens_.size() || tokens_[static_cast<std::size_t>(s)] != special_name(s))
            throw ValidationError("token table must begin with [PAD] [CLS] [SEP] [UNK]");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
            throw ValidationError("duplicate token in table: " + tokens_[i]);
    }
}

TokenTable TokenTable::with_specials(const std::vector<std::string>& vocab_tokens) {
    std::vector<std::string> all = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
    all.insert(all.end(), vocab_tokens.begin(), vocab_tokens.end());
    return TokenTable(std::move(all));
}

int TokenTable::id_or_unk(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

int TokenTable::id_or_throw(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw LookupError("token not in table: " + token);
    return it->second;
}

SequenceInput build_pair_input(const TokenTable& table, const std::string& code_token_a,
                               const std::vector<std::string>& name_a,
                               const std::string& code_token_b,
                               const std::vector<std::string>& name_b, int max_len) {
    if (max_len < 5) throw ConfigError("max_len must be >= 5");
    std::vector<std::string> a = name_a, b = name_b;
    // Trim the longer name from the right until the sequence fits.
    while (5 + a.size() + b.size() > static_cast<std::size_t>(max_len)) {
        if (a.size() > b.size())
            a.pop_back();
        else
            b.pop_back();
    }

    SequenceInput input;
    input.ids.reserve(static_cast<std::size_t>(max_len));
    input.ids.push_back(TokenTable::kCls);
    input.ids.push_back(table.id_or_throw(code_token_a));
    for (const auto& w : a) input.ids.push_back(table.id_or_unk(w));
    input.ids.push_back(TokenTable::kSep);
    const std::size_t first_segment = input.ids.size();
    input.ids.push_back(table.id_or_throw(code_token_b));
    for (const auto& w : b) input.ids.push_back(table.id_or_unk(w));
    input.ids.push_back(TokenTable::kSep);
    input.valid = static_cast<int>(input.ids.size());
    input.ids.resize(static_cast<std::size_t>(max_len), TokenTable::kPad);

    input.segments.assign(static_cast<std::size_t>(max_len), 1);
    for (std::size_t i = 0; i < first_segment; ++i) input.segments[i] = 0;
    return input;
}

namespace {
constexpr char kMagic[4] = {'C', 'R', 'L', '1'};
constexpr unsigned char kVersion = 1;

void write_raw(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void read_raw(std::istream& in, void* p, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw ParseError(path + ": truncated checkpoint");
}
} // namespace

void save_checkpoint(const std::string& path, const EncoderModel<float>& model,
                     const TokenTable& table, const std::string& extra_state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);

    nlohmann::json block;
    block["layers"] = model.config.layers;
    block["heads"] = model.config.heads;
    block["dim"] = model.config.dim;
    block["ffn_dim"] = model.config.ffn();
    block["max_len"] = model.config.max_len;
    block["dropout"] = model.config.dropout;
    block["seed"] = model.config.seed;
    block["tokens"] = table.tokens();
    block["extra"] = extra_state;
    const std::string block_str = block.dump();

    write_raw(out, kMagic, 4);
    write_raw(out, &kVersion, 1);
    const std::uint64_t block_len = block_str.size();
    write_raw(out, &block_len, 8);
    write_raw(out, block_str.data(), block_str.size());

    model.params.for_each_array([&](std::span<const float> s, ParamGroup) {
        write_raw(out, s.data(), s.size() * sizeof(float));
    });
    out.flush();
    if (!out) throw IoError("write failure: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[4];
    read_raw(in, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError(path + ": not a checkpoint file");
    unsigned char version = 0;
    read_raw(in, &version, 1, path);
    if (version != kVersion) throw ParseError(path + ": unsupported checkpoint version");
    std::uint64_t block_len = 0;
    read_raw(in, &block_len, 8, path);
    std::string block_str(block_len, '\0');
    read_raw(in, block_str.data(), block_len, path);

    nlohmann::json block;
    try {
        block = nlohmann::json::parse(block_str);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad config block: " + e.what());
    }

    EncoderConfig config;
    config.layers = block.at("layers").get<int>();
    config.heads = block.at("heads").get<int>();
    config.dim = block.at("dim").get<int>();
    config.ffn_dim = block.at("ffn_dim").get<int>();
    config.max_len = block.at("max_len").get<int>();
    config.dropout = block.at("dropout").get<double>();
    config.seed = block.value("seed", std::uint64_t{1});

    Checkpoint ck;
    ck.table = TokenTable(block.at("tokens").get<std::vector<std::string>>());
    ck.extra_state = block.value("extra", std::string{});
    ck.model = EncoderModel<float>(config, ck.table.size());
    ck.model.params.for_each_array([&](std::span<float> s, ParamGroup) {
        read_raw(in, s.data(), s.size() * sizeof(float), path);
    });
    return ck;
}

} // namespace crel::encoder
