#include "driftlab/gradcore/params.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <memory>

#include "driftlab/gradcore/error.hpp"

namespace dlab {

std::string_view to_string(ParamGroup g) noexcept {
    switch (g) {
        case ParamGroup::trunk: return "trunk";
        case ParamGroup::time_proj: return "time_proj";
        case ParamGroup::cond_embed: return "cond_embed";
        case ParamGroup::cond_proj: return "cond_proj";
    }
    return "trunk";
}

ParamGroup parse_param_group(std::string_view s) {
    if (s == "trunk") return ParamGroup::trunk;
    if (s == "time_proj") return ParamGroup::time_proj;
    if (s == "cond_embed") return ParamGroup::cond_embed;
    if (s == "cond_proj") return ParamGroup::cond_proj;
    throw ConfigError("unknown parameter group: " + std::string(s));
}

GroupSet all_groups() {
    return {ParamGroup::trunk, ParamGroup::time_proj, ParamGroup::cond_embed, ParamGroup::cond_proj};
}

Parameter& ParamStore::add(std::string name, ParamGroup group, Tensor value) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(Parameter{std::move(name), group, std::move(value)});
    return params_.back();
}

bool ParamStore::contains(std::string_view name) const {
    return index_.contains(std::string(name));
}

Parameter& ParamStore::get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return params_[it->second];
}

const Parameter& ParamStore::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return params_[it->second];
}

std::size_t ParamStore::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

namespace {

struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr); }
    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

// x86-64 is little-endian; the raw bytes of a double are the LE encoding.
static_assert(sizeof(double) == 8);

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes);
    return h.hex();
}

std::string ParamStore::hash() const {
    return hash(all_groups());
}

std::string ParamStore::hash(const GroupSet& groups) const {
    Sha256 h;
    for (const auto& p : params_) {
        if (!groups.contains(p.group)) continue;
        h.update(p.name);
        h.update(to_string(p.group));
        h.update(shape_string(p.value.shape()));
        h.update(p.value.data().data(), p.value.size() * sizeof(double));
    }
    return h.hex();
}

bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        const auto& x = a.params_[i];
        const auto& y = b.params_[i];
        if (x.name != y.name || x.group != y.group || x.value.shape() != y.value.shape()) return false;
        if (std::memcmp(x.value.data().data(), y.value.data().data(), x.value.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

}  // namespace dlab
