#pragma once

#include "fedalign/aggregation.hpp"
#include "fedalign/config.hpp"
#include "fedalign/domains.hpp"
#include "fedalign/error.hpp"
#include "fedalign/federation.hpp"
#include "fedalign/hekit.hpp"
#include "fedalign/models.hpp"
#include "fedalign/numcore.hpp"
#include "fedalign/runner.hpp"
#include "fedalign/serialize.hpp"
