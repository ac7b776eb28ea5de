#pragma once

#include "vhcr/checkpoint.hpp"
#include "vhcr/cli.hpp"
#include "vhcr/config.hpp"
#include "vhcr/corpus.hpp"
#include "vhcr/diagnostics.hpp"
#include "vhcr/errors.hpp"
#include "vhcr/gaussian.hpp"
#include "vhcr/generation.hpp"
#include "vhcr/grad_check.hpp"
#include "vhcr/metrics.hpp"
#include "vhcr/model.hpp"
#include "vhcr/nets.hpp"
#include "vhcr/objective.hpp"
#include "vhcr/ops.hpp"
#include "vhcr/params.hpp"
#include "vhcr/rng.hpp"
#include "vhcr/synthetic.hpp"
#include "vhcr/tensor.hpp"
#include "vhcr/training.hpp"
