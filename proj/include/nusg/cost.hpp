#pragma once

#include <cstdint>
#include <string>

namespace nusg {

/// Operation counts gathered while a CostTrace is active on this thread.
///
/// Two conventions are tracked side by side:
///  - `flops`: 2 ops per multiply-accumulate in a convolution, plus one op per
///    output element for the bias, and one op per output element for batch
///    norm, activations, pooling, upsampling and elementwise adds.
///  - `macs`: convolution multiply-accumulates only. This is what common
///    model profilers report under the label "FLOPs".
struct CostCounts {
    double flops = 0.0;
    double macs = 0.0;
    int64_t conv_layers = 0;
};

/// RAII scope that records op costs on the current thread. With
/// `skip_compute`, ops produce correctly shaped zero tensors without doing
/// the arithmetic, so a full-size model can be traced in milliseconds.
class CostTrace {
public:
    explicit CostTrace(bool skip_compute = false);
    ~CostTrace();
    CostTrace(const CostTrace&) = delete;
    CostTrace& operator=(const CostTrace&) = delete;

    const CostCounts& counts() const { return counts_; }

    static CostTrace* active();
    static bool skipping_compute();
    static void add_conv(double macs, double bias_elems);
    static void add_elementwise(double elems);

private:
    CostCounts counts_;
    bool skip_compute_;
    CostTrace* prev_;
};

}  // namespace nusg
