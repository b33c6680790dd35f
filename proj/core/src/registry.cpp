#include "mapn/registry.hpp"

#include <set>

#include "mapn/error.hpp"

namespace mapn {

ParamRegistry::ParamRegistry(std::vector<std::string> anatomy_labels)
  : labels_(std::move(anatomy_labels))
  , specific_(labels_.size())
{
    if (labels_.empty()) throw ConfigError("a model needs at least one anatomy");
    std::set<std::string> seen;
    for (const auto& l : labels_) {
        if (l.empty() || l.find_first_of("@:, \t\n") != std::string::npos) {
            throw ConfigError("invalid anatomy label '" + l + "'");
        }
        if (!seen.insert(l).second) throw ConfigError("duplicate anatomy label '" + l + "'");
    }
}

AnatomyId ParamRegistry::anatomy(int index) const
{
    if (index < 0 || index >= anatomy_count()) {
        throw ConfigError("unknown anatomy index " + std::to_string(index) + " (model has " +
                          std::to_string(anatomy_count()) + ")");
    }
    return {index, labels_[index]};
}

AnatomyId ParamRegistry::anatomy(const std::string& label) const
{
    for (int i = 0; i < anatomy_count(); ++i) {
        if (labels_[i] == label) return {i, label};
    }
    throw ConfigError("unknown anatomy '" + label + "'");
}

Parameter& ParamRegistry::add_shared(const std::string& name, ParamRole role, Tensor init)
{
    if (labels_.empty()) throw ConfigError("registry has no anatomies");
    if (shared_.contains(name) || (!specific_.empty() && specific_[0].contains(name))) {
        throw ConfigError("parameter '" + name + "' registered twice");
    }
    auto& p = shared_[name];
    p = Parameter{name, name, "shared", role, std::move(init)};
    return p;
}

void ParamRegistry::add_specific(const std::string& name, ParamRole role, const Tensor& init)
{
    if (labels_.empty()) throw ConfigError("registry has no anatomies");
    if (shared_.contains(name) || specific_[0].contains(name)) {
        throw ConfigError("parameter '" + name + "' registered twice");
    }
    for (int i = 0; i < anatomy_count(); ++i) {
        specific_[i][name] = Parameter{name, name + "@" + labels_[i], "specific:" + labels_[i], role, init};
    }
}

void ParamRegistry::switch_anatomy(int index)
{
    anatomy(index);
    active_ = index;
}

Parameter& ParamRegistry::lookup(const std::string& name)
{
    return const_cast<Parameter&>(static_cast<const ParamRegistry&>(*this).lookup(name));
}

const Parameter& ParamRegistry::lookup(const std::string& name) const
{
    if (auto it = shared_.find(name); it != shared_.end()) return it->second;
    const auto& set = specific_.at(active_);
    if (auto it = set.find(name); it != set.end()) return it->second;
    throw ConfigError("no parameter named '" + name + "'");
}

Parameter* ParamRegistry::find_shared(const std::string& name)
{
    auto it = shared_.find(name);
    return it == shared_.end() ? nullptr : &it->second;
}

Parameter* ParamRegistry::find_specific(const std::string& name, int anatomy)
{
    auto& set = specific_.at(anatomy);
    auto it = set.find(name);
    return it == set.end() ? nullptr : &it->second;
}

Parameter* ParamRegistry::find_key(const std::string& key)
{
    return const_cast<Parameter*>(static_cast<const ParamRegistry&>(*this).find_key(key));
}

const Parameter* ParamRegistry::find_key(const std::string& key) const
{
    const auto at = key.rfind('@');
    if (at == std::string::npos) {
        auto it = shared_.find(key);
        return it == shared_.end() ? nullptr : &it->second;
    }
    const auto label = key.substr(at + 1);
    for (int i = 0; i < anatomy_count(); ++i) {
        if (labels_[i] != label) continue;
        auto it = specific_[i].find(key.substr(0, at));
        return it == specific_[i].end() ? nullptr : &it->second;
    }
    return nullptr;
}

void ParamRegistry::for_each(const std::function<void(Parameter&)>& fn)
{
    for (auto& [_, p] : shared_) fn(p);
    for (auto& set : specific_) {
        for (auto& [_, p] : set) fn(p);
    }
}

void ParamRegistry::for_each(const std::function<void(const Parameter&)>& fn) const
{
    for (const auto& [_, p] : shared_) fn(p);
    for (const auto& set : specific_) {
        for (const auto& [_, p] : set) fn(p);
    }
}

std::int64_t ParamRegistry::shared_count() const
{
    std::int64_t n = 0;
    for (const auto& [_, p] : shared_) n += static_cast<std::int64_t>(p.value.size());
    return n;
}

std::int64_t ParamRegistry::specific_count() const
{
    std::int64_t n = 0;
    if (specific_.empty()) return 0;
    for (const auto& [_, p] : specific_[0]) n += static_cast<std::int64_t>(p.value.size());
    return n;
}

std::int64_t ParamRegistry::total_count() const { return shared_count() + anatomy_count() * specific_count(); }

void ParamRegistry::census() const
{
    for (const auto& [name, p] : shared_) {
        if (p.partition != "shared" || p.key != name) throw ConfigError("shared parameter '" + name + "' mis-tagged");
        for (const auto& set : specific_) {
            if (set.contains(name)) throw ConfigError("parameter '" + name + "' is both shared and specific");
        }
    }
    for (int i = 1; i < anatomy_count(); ++i) {
        if (specific_[i].size() != specific_[0].size()) {
            throw ConfigError("anatomy '" + labels_[i] + "' has a different specific parameter set");
        }
        for (const auto& [name, p] : specific_[0]) {
            auto it = specific_[i].find(name);
            if (it == specific_[i].end() || it->second.value.shape() != p.value.shape() || it->second.role != p.role) {
                throw ConfigError("specific parameter '" + name + "' differs between anatomies");
            }
        }
    }
    for (int i = 0; i < anatomy_count(); ++i) {
        for (const auto& [name, p] : specific_[i]) {
            if (p.key != name + "@" + labels_[i] || p.partition != "specific:" + labels_[i]) {
                throw ConfigError("specific parameter '" + p.key + "' mis-tagged");
            }
        }
    }
}

}  // namespace mapn
