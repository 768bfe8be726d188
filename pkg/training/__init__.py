"""
两阶段训练
"""
