#pragma once

#include "mbsvd/error.hpp"
#include "mbsvd/linalg/dense.hpp"
#include "mbsvd/linalg/sparse.hpp"
#include "mbsvd/linalg/svd.hpp"
#include "mbsvd/dataio.hpp"
#include "mbsvd/graph.hpp"
#include "mbsvd/model.hpp"
#include "mbsvd/objective.hpp"
#include "mbsvd/eval.hpp"
#include "mbsvd/training.hpp"
#include "mbsvd/io.hpp"
#include "mbsvd/config.hpp"
#include "mbsvd/synthetic.hpp"
#include "mbsvd/cli.hpp"
