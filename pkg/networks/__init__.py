"""
网络结构：双流分割网络与匹配网络
"""
