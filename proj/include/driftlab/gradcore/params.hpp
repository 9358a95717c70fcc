#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "driftlab/gradcore/tensor.hpp"

namespace dlab {

/// Parameter groups. `trunk` includes the output head; `cond_embed` and
/// `cond_proj` form the conditioning subset trained by the cond-only scope.
enum class ParamGroup { trunk, time_proj, cond_embed, cond_proj };

std::string_view to_string(ParamGroup g) noexcept;
ParamGroup parse_param_group(std::string_view s);

using GroupSet = std::set<ParamGroup>;
GroupSet all_groups();

struct Parameter {
    std::string name;
    ParamGroup group = ParamGroup::trunk;
    Tensor value;
};

using GradMap = std::map<std::string, Tensor>;

/// Named parameters in insertion order. Insertion order is the checkpoint
/// block order.
class ParamStore {
public:
    Parameter& add(std::string name, ParamGroup group, Tensor value);

    bool contains(std::string_view name) const;
    Parameter& get(std::string_view name);
    const Parameter& get(std::string_view name) const;
    Tensor& value(std::string_view name) { return get(name).value; }
    const Tensor& value(std::string_view name) const { return get(name).value; }

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t scalar_count() const noexcept;
    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    /// SHA-256 (hex) over names, groups, shapes and raw little-endian values.
    std::string hash() const;
    /// Hash restricted to the given groups.
    std::string hash(const GroupSet& groups) const;

    friend bool operator==(const ParamStore& a, const ParamStore& b);

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(std::string_view bytes);

}  // namespace dlab
