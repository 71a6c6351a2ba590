#pragma once

#include "qs5/error.hpp"
#include "qs5/tensor.hpp"
#include "qs5/quant.hpp"
#include "qs5/qops.hpp"
#include "qs5/ssm.hpp"
#include "qs5/quant_config.hpp"
#include "qs5/model.hpp"
#include "qs5/integer_path.hpp"
#include "qs5/serialize.hpp"
#include "qs5/dynsys.hpp"
#include "qs5/toy_task.hpp"
#include "qs5/train.hpp"
#include "qs5/experiment.hpp"
