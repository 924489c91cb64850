#pragma once

#include "pairint/bandit/discovery.hpp"
#include "pairint/bandit/policy.hpp"
#include "pairint/bandit/posterior.hpp"
#include "pairint/core/error.hpp"
#include "pairint/core/io.hpp"
#include "pairint/core/rng.hpp"
#include "pairint/core/types.hpp"
#include "pairint/disjoint.hpp"
#include "pairint/kernels.hpp"
#include "pairint/knn_index.hpp"
#include "pairint/ratio/knn_kl.hpp"
#include "pairint/ratio/nre.hpp"
#include "pairint/ratio/separability.hpp"
#include "pairint/ratio/smile.hpp"
#include "pairint/synth.hpp"
