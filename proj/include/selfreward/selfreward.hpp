#pragma once

// Everything in one include.
#include "selfreward/distribution.hpp"
#include "selfreward/endpoint.hpp"
#include "selfreward/pipeline.hpp"
#include "selfreward/report.hpp"
#include "selfreward/tabular_policy.hpp"
