#include "skelocc/appearance.hpp"

#include <stdexcept>
#include <string>

namespace skelocc {

void CodeTable::add(int id) {
    if (contains(id)) throw std::invalid_argument("appearance id " + std::to_string(id) + " is already registered");
    codes_.emplace(id, Tensor::zeros({1, dim_}, true));
}

std::vector<int> CodeTable::ids() const {
    std::vector<int> out;
    for (const auto& [id, _] : codes_) out.push_back(id);
    return out;
}

const Tensor& CodeTable::get_code(int id) const {
    const auto it = codes_.find(id);
    if (it == codes_.end()) throw std::out_of_range("unknown appearance id " + std::to_string(id));
    return it->second;
}

Tensor CodeTable::regularize(float weight) const {
    if (codes_.empty()) return Tensor::scalar(0.0f);
    Tensor acc;
    for (const auto& [_, c] : codes_) {
        const Tensor sq = sum(mul(c, c));
        acc = acc.defined() ? skelocc::add(acc, sq) : sq;
    }
    return scale(acc, weight / static_cast<float>(codes_.size()));
}

NamedTensors CodeTable::parameters() const {
    NamedTensors out;
    for (const auto& [id, c] : codes_) out.emplace_back("app.code." + std::to_string(id), c);
    return out;
}

void CodeTable::load(const std::map<std::string, Tensor>& source) {
    const std::string prefix = "app.code.";
    for (const auto& [name, t] : source) {
        if (name.rfind(prefix, 0) != 0) continue;
        int id = 0;
        try {
            id = std::stoi(name.substr(prefix.size()));
        } catch (const std::exception&) {
            throw std::invalid_argument("checkpoint entry '" + name + "' has a malformed appearance id");
        }
        if (t.numel() != dim_)
            throw std::invalid_argument("checkpoint entry '" + name + "' has " + std::to_string(t.numel()) +
                                        " values, expected " + std::to_string(dim_));
        if (!contains(id)) add(id);
        std::copy(t.data().begin(), t.data().end(), codes_.at(id).data().begin());
    }
}

}  // namespace skelocc
