"""
执行引擎模块
"""
from .executor import ExecPlan, execute, forward_logits, forward_all, check_plan
from .operators import OPERATORS

__all__ = ['ExecPlan', 'execute', 'forward_logits', 'forward_all', 'check_plan', 'OPERATORS']
