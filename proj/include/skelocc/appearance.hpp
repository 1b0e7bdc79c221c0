#pragma once

#include <map>
#include <vector>

#include "skelocc/checkpoint.hpp"
#include "skelocc/tensor.hpp"

namespace skelocc {

/// Learnable per-identity latent codes, zero-initialized.
class CodeTable {
public:
    explicit CodeTable(int dim = 16) : dim_(dim) {}

    int dim() const { return dim_; }
    /// Registers a zero code. Throws std::invalid_argument if the id exists.
    void add(int id);
    bool contains(int id) const { return codes_.count(id) != 0; }
    std::vector<int> ids() const;
    /// The live 1×dim parameter. Throws std::out_of_range naming the id.
    const Tensor& get_code(int id) const;

    /// weight · mean over codes of the squared L2 norm.
    Tensor regularize(float weight) const;

    /// Parameters named "app.code.<id>".
    NamedTensors parameters() const;
    /// Registers and fills every "app.code.<id>" entry of a checkpoint.
    void load(const std::map<std::string, Tensor>& source);

private:
    int dim_;
    std::map<int, Tensor> codes_;
};

}  // namespace skelocc
