#include "nusg/cost.hpp"

namespace nusg {

namespace {
thread_local CostTrace* g_active = nullptr;
}

CostTrace::CostTrace(bool skip_compute) : skip_compute_(skip_compute), prev_(g_active) { g_active = this; }

CostTrace::~CostTrace() { g_active = prev_; }

CostTrace* CostTrace::active() { return g_active; }

bool CostTrace::skipping_compute() { return g_active != nullptr && g_active->skip_compute_; }

void CostTrace::add_conv(double macs, double bias_elems) {
    if (!g_active) return;
    g_active->counts_.macs += macs;
    g_active->counts_.flops += 2.0 * macs + bias_elems;
    g_active->counts_.conv_layers += 1;
}

void CostTrace::add_elementwise(double elems) {
    if (!g_active) return;
    g_active->counts_.flops += elems;
}

}  // namespace nusg
