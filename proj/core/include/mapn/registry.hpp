#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mapn/parameter.hpp"

namespace mapn {

struct AnatomyId {
    int index = 0;
    std::string label;
};

/// Named parameter store split into one anatomy-shared set and one anatomy-specific
/// set per anatomy. All specific sets carry identical names and shapes.
class ParamRegistry {
public:
    ParamRegistry() = default;
    explicit ParamRegistry(std::vector<std::string> anatomy_labels);

    const std::vector<std::string>& anatomies() const noexcept { return labels_; }
    int anatomy_count() const noexcept { return static_cast<int>(labels_.size()); }
    AnatomyId anatomy(int index) const;
    AnatomyId anatomy(const std::string& label) const;

    Parameter& add_shared(const std::string& name, ParamRole role, Tensor init);
    /// Adds `name` to every anatomy-specific set, each starting from a copy of `init`.
    void add_specific(const std::string& name, ParamRole role, const Tensor& init);

    void switch_anatomy(int index);
    void switch_anatomy(const AnatomyId& id) { switch_anatomy(id.index); }
    AnatomyId active() const { return anatomy(active_); }

    /// Resolves `name` in the shared set or in the active anatomy's set.
    Parameter& lookup(const std::string& name);
    const Parameter& lookup(const std::string& name) const;
    Parameter* find_shared(const std::string& name);
    Parameter* find_specific(const std::string& name, int anatomy);
    Parameter* find_key(const std::string& key);
    const Parameter* find_key(const std::string& key) const;

    const std::map<std::string, Parameter>& shared() const noexcept { return shared_; }
    const std::map<std::string, Parameter>& specific(int anatomy) const { return specific_.at(anatomy); }
    std::map<std::string, Parameter>& specific(int anatomy) { return specific_.at(anatomy); }

    /// Shared set first, then each anatomy in index order; names in lexicographic order.
    void for_each(const std::function<void(Parameter&)>& fn);
    void for_each(const std::function<void(const Parameter&)>& fn) const;

    std::int64_t shared_count() const;
    /// Scalar count of one anatomy's specific set (identical for every anatomy).
    std::int64_t specific_count() const;
    std::int64_t total_count() const;

    /// Verifies the partition invariants; throws ConfigError on the first violation.
    void census() const;

private:
    std::vector<std::string> labels_;
    std::map<std::string, Parameter> shared_;
    std::vector<std::map<std::string, Parameter>> specific_;
    int active_ = 0;
};

}  // namespace mapn
